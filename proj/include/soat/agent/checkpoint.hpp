#pragma once

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "soat/agent/model.hpp"
#include "soat/util/errors.hpp"

namespace soat::agent {

// Optimizer and loop state stored alongside the model so training can resume
// bit-exactly.
template <class T>
struct TrainerBlob {
  uint64_t iteration = 0;
  uint64_t adam_step = 0;
  double pg_baseline = 0.0;
  uint8_t pg_baseline_initialized = 0;
  uint8_t pretrain_done = 0;
  std::vector<nn::Tensor<T>> first_moments;   // aligned with Model::parameters()
  std::vector<nn::Tensor<T>> second_moments;
};

namespace detail {

inline constexpr char kMagic[8] = {'S', 'O', 'A', 'T', 'C', 'K', 'P', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_bytes(std::FILE* f, const void* p, size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw util::DataError("checkpoint: write failed");
}
inline void read_bytes(std::FILE* f, void* p, size_t n) {
  if (std::fread(p, 1, n, f) != n) throw util::DataError("checkpoint: truncated file");
}
inline void write_u32(std::FILE* f, uint32_t v) { write_bytes(f, &v, sizeof(v)); }
inline void write_u64(std::FILE* f, uint64_t v) { write_bytes(f, &v, sizeof(v)); }
inline uint32_t read_u32(std::FILE* f) {
  uint32_t v;
  read_bytes(f, &v, sizeof(v));
  return v;
}
inline uint64_t read_u64(std::FILE* f) {
  uint64_t v;
  read_bytes(f, &v, sizeof(v));
  return v;
}
inline void write_string(std::FILE* f, const std::string& s) {
  write_u32(f, static_cast<uint32_t>(s.size()));
  write_bytes(f, s.data(), s.size());
}
inline std::string read_string(std::FILE* f) {
  const uint32_t n = read_u32(f);
  std::string s(n, '\0');
  read_bytes(f, s.data(), n);
  return s;
}

template <class T>
void write_tensor_data(std::FILE* f, const nn::Tensor<T>& t) {
  write_u32(f, static_cast<uint32_t>(t.rows));
  write_u32(f, static_cast<uint32_t>(t.cols));
  write_bytes(f, t.data.data(), t.size() * sizeof(T));
}

template <class T>
nn::Tensor<T> read_tensor_data(std::FILE* f) {
  const int rows = static_cast<int>(read_u32(f));
  const int cols = static_cast<int>(read_u32(f));
  nn::Tensor<T> t(rows, cols);
  read_bytes(f, t.data.data(), t.size() * sizeof(T));
  return t;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const TrainerBlob<T>* trainer = nullptr) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw util::DataError("checkpoint: cannot open for writing: " + path);
  write_bytes(f.get(), kMagic, sizeof(kMagic));
  const uint32_t dtype = sizeof(T);
  write_u32(f.get(), dtype);
  write_string(f.get(), model.cfg.to_kv().echo());

  auto params = model.parameters();
  write_u32(f.get(), static_cast<uint32_t>(params.size()));
  for (nn::Parameter<T>* p : params) {
    write_string(f.get(), p->name);
    write_tensor_data(f.get(), p->value);
  }

  const uint8_t has_trainer = trainer ? 1 : 0;
  write_bytes(f.get(), &has_trainer, 1);
  if (trainer) {
    if (trainer->first_moments.size() != params.size() ||
        trainer->second_moments.size() != params.size()) {
      throw util::ConfigError("checkpoint: trainer moments do not match parameter count");
    }
    write_u64(f.get(), trainer->iteration);
    write_u64(f.get(), trainer->adam_step);
    write_bytes(f.get(), &trainer->pg_baseline, sizeof(double));
    write_bytes(f.get(), &trainer->pg_baseline_initialized, 1);
    write_bytes(f.get(), &trainer->pretrain_done, 1);
    for (size_t i = 0; i < params.size(); ++i) {
      write_tensor_data(f.get(), trainer->first_moments[i]);
      write_tensor_data(f.get(), trainer->second_moments[i]);
    }
  }
  if (std::fflush(f.get()) != 0) throw util::DataError("checkpoint: flush failed: " + path);
}

template <class T>
Model<T> load_checkpoint(const std::string& path, TrainerBlob<T>* trainer = nullptr) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw util::DataError("checkpoint: cannot open: " + path);
  char magic[8];
  read_bytes(f.get(), magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw util::DataError("checkpoint: bad magic in " + path);
  }
  const uint32_t dtype = read_u32(f.get());
  if (dtype != sizeof(T)) {
    throw util::DataError("checkpoint: stored precision (" + std::to_string(dtype * 8) +
                          "-bit) does not match requested precision");
  }
  util::KvConfig kv = util::KvConfig::from_string(read_string(f.get()));
  ModelConfig cfg = ModelConfig::from_kv(kv);
  kv.reject_unknown_keys();
  Model<T> model = Model<T>::make(cfg, /*seed=*/0);

  std::unordered_map<std::string, nn::Parameter<T>*> by_name;
  auto params = model.parameters();
  for (nn::Parameter<T>* p : params) by_name[p->name] = p;

  const uint32_t count = read_u32(f.get());
  if (count != params.size()) {
    throw util::DataError("checkpoint: parameter count mismatch (" + std::to_string(count) +
                          " stored, " + std::to_string(params.size()) + " expected)");
  }
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(f.get());
    nn::Tensor<T> data = read_tensor_data<T>(f.get());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw util::DataError("checkpoint: unknown parameter " + name);
    if (it->second->value.rows != data.rows || it->second->value.cols != data.cols) {
      throw util::DataError("checkpoint: shape mismatch for " + name);
    }
    it->second->value = std::move(data);
  }

  uint8_t has_trainer = 0;
  read_bytes(f.get(), &has_trainer, 1);
  if (trainer) {
    if (!has_trainer) throw util::DataError("checkpoint: no trainer state in " + path);
    trainer->iteration = read_u64(f.get());
    trainer->adam_step = read_u64(f.get());
    read_bytes(f.get(), &trainer->pg_baseline, sizeof(double));
    read_bytes(f.get(), &trainer->pg_baseline_initialized, 1);
    read_bytes(f.get(), &trainer->pretrain_done, 1);
    trainer->first_moments.clear();
    trainer->second_moments.clear();
    for (uint32_t i = 0; i < count; ++i) {
      trainer->first_moments.push_back(read_tensor_data<T>(f.get()));
      trainer->second_moments.push_back(read_tensor_data<T>(f.get()));
    }
  }
  return model;
}

}  // namespace soat::agent
