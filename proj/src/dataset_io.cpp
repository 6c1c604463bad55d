#include "peftlab/dataset_io.hpp"

namespace peftlab {

namespace {

constexpr const char* kDatasetTag = "dataset:";

void add_items(std::vector<std::pair<std::string, Tensor>>& store, const std::string& split,
               TaskKind kind, const std::vector<DataItem>& items) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DataItem& item = items[i];
    const std::string prefix = split + "." + std::to_string(i) + ".";
    store.emplace_back(prefix + "features", item.features);
    switch (kind) {
      case TaskKind::UtteranceCls:
        store.emplace_back(prefix + "label", Tensor::scalar(static_cast<double>(item.label)));
        break;
      case TaskKind::FrameCtc: {
        Tensor seq({static_cast<Index>(item.seq.size())});
        for (std::size_t k = 0; k < item.seq.size(); ++k) {
          seq[static_cast<Index>(k)] = static_cast<double>(item.seq[k]);
        }
        store.emplace_back(prefix + "seq", std::move(seq));
        break;
      }
      case TaskKind::Diarization:
        store.emplace_back(prefix + "activity", item.activity);
        break;
    }
  }
}

int meta_int(const Checkpoint& ckpt, const std::string& name) {
  const Tensor* t = ckpt.find(name);
  if (t == nullptr || t->size() != 1) {
    throw IoError("dataset: missing meta record \"" + name + "\"");
  }
  return static_cast<int>((*t)[0]);
}

std::vector<DataItem> read_items(const Checkpoint& ckpt, const std::string& split, TaskKind kind,
                                 int count) {
  std::vector<DataItem> items;
  items.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::string prefix = split + "." + std::to_string(i) + ".";
    DataItem item;
    const Tensor* features = ckpt.find(prefix + "features");
    if (features == nullptr) throw IoError("dataset: missing \"" + prefix + "features\"");
    item.features = *features;
    switch (kind) {
      case TaskKind::UtteranceCls: {
        const Tensor* label = ckpt.find(prefix + "label");
        if (label == nullptr || label->size() != 1) {
          throw IoError("dataset: missing \"" + prefix + "label\"");
        }
        item.label = static_cast<int>((*label)[0]);
        break;
      }
      case TaskKind::FrameCtc: {
        const Tensor* seq = ckpt.find(prefix + "seq");
        if (seq == nullptr) throw IoError("dataset: missing \"" + prefix + "seq\"");
        for (Index k = 0; k < seq->size(); ++k) item.seq.push_back(static_cast<int>((*seq)[k]));
        break;
      }
      case TaskKind::Diarization: {
        const Tensor* activity = ckpt.find(prefix + "activity");
        if (activity == nullptr) throw IoError("dataset: missing \"" + prefix + "activity\"");
        item.activity = *activity;
        break;
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& data) {
  data.spec.validate();
  std::vector<std::pair<std::string, Tensor>> store;
  store.emplace_back("meta.n_classes", Tensor::scalar(data.spec.n_classes));
  store.emplace_back("meta.vocab_size", Tensor::scalar(data.spec.vocab_size));
  store.emplace_back("meta.max_label_len", Tensor::scalar(data.spec.max_label_len));
  store.emplace_back("meta.n_train", Tensor::scalar(static_cast<double>(data.train.size())));
  store.emplace_back("meta.n_test", Tensor::scalar(static_cast<double>(data.test.size())));
  add_items(store, "train", data.spec.kind, data.train);
  add_items(store, "test", data.spec.kind, data.test);

  // The container's encoder slot carries the two feature dimensions.
  CheckpointMeta meta;
  meta.config = EncoderConfig{1, 1, 1, 1, std::max(1, data.d_input), std::max(1, data.frames)};
  meta.method = kDatasetTag + data.spec.name();
  meta.seed = data.seed;
  std::vector<std::pair<std::string, const Tensor*>> refs;
  refs.reserve(store.size());
  for (const auto& [name, t] : store) refs.emplace_back(name, &t);
  save_checkpoint(path, meta, refs);
}

Dataset load_dataset(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::string& method = ckpt.meta.method;
  if (method.rfind(kDatasetTag, 0) != 0) {
    throw IoError("dataset: \"" + path + "\" is not a dataset container");
  }
  Dataset data;
  data.spec.kind = task_from_name(method.substr(std::string(kDatasetTag).size()));
  data.spec.n_classes = meta_int(ckpt, "meta.n_classes");
  data.spec.vocab_size = meta_int(ckpt, "meta.vocab_size");
  data.spec.max_label_len = meta_int(ckpt, "meta.max_label_len");
  data.spec.validate();
  data.d_input = ckpt.meta.config.d_input;
  data.frames = ckpt.meta.config.max_len;
  data.seed = ckpt.meta.seed;
  data.train = read_items(ckpt, "train", data.spec.kind, meta_int(ckpt, "meta.n_train"));
  data.test = read_items(ckpt, "test", data.spec.kind, meta_int(ckpt, "meta.n_test"));
  return data;
}

}  // namespace peftlab
