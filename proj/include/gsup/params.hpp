#pragma once

/// Named parameter arrays with deterministic initialization, gradient
/// accumulation across tapes, an Adam optimizer, and a checkpoint format
/// (flat float32 binary + text manifest) that round-trips optimizer state.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsup/rng.hpp"
#include "gsup/tensor.hpp"

namespace gsup {

struct ParamEntry {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // accumulated across graphs within one step
  std::vector<float> m, v;  // Adam first/second moments
  bool trainable = true;
};

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Create-if-absent with truncated-normal init (|x| <= 2 std), seeded by
  /// the parameter name so creation order does not matter.
  ParamEntry& trunc_normal(const std::string& name, const Shape& shape,
                           float std_dev = 0.02f) {
    if (ParamEntry* e = find(name)) return checked(*e, name, shape);
    ParamEntry& e = emplace(name, shape);
    Rng rng = Rng::stream(seed_, "param/" + name, 0);
    for (float& v : e.value) v = float(rng.truncated_normal(std_dev));
    return e;
  }

  ParamEntry& zeros(const std::string& name, const Shape& shape) {
    if (ParamEntry* e = find(name)) return checked(*e, name, shape);
    return emplace(name, shape);
  }

  ParamEntry& constant(const std::string& name, const Shape& shape,
                       float value) {
    if (ParamEntry* e = find(name)) return checked(*e, name, shape);
    ParamEntry& e = emplace(name, shape);
    for (float& v : e.value) v = value;
    return e;
  }

  bool has(const std::string& name) const {
    for (const auto& [n, e] : entries_)
      if (n == name) return true;
    return false;
  }

  ParamEntry& entry(const std::string& name) {
    if (ParamEntry* e = find(name)) return *e;
    throw Error("unknown parameter '" + name + "'");
  }

  const std::vector<std::pair<std::string, ParamEntry>>& entries() const {
    return entries_;
  }

  /// Mark every parameter whose name starts with `prefix` (un)trainable.
  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [n, e] : entries_)
      if (n.rfind(prefix, 0) == 0) e.trainable = trainable;
  }

  void zero_grads() {
    for (auto& [n, e] : entries_)
      std::fill(e.grad.begin(), e.grad.end(), 0.0f);
  }

  std::int64_t step() const { return step_; }
  std::uint64_t seed() const { return seed_; }

  double grad_norm(const std::string& name) {
    const ParamEntry& e = entry(name);
    double acc = 0;
    for (float g : e.grad) acc += double(g) * double(g);
    return std::sqrt(acc);
  }

  /// One Adam update with bias correction over all trainable parameters,
  /// consuming the accumulated gradients.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, double(step_));
    const double bc2 = 1.0 - std::pow(beta2, double(step_));
    for (auto& [n, e] : entries_) {
      if (!e.trainable) continue;
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = double(e.grad[i]);
        const double m = beta1 * double(e.m[i]) + (1.0 - beta1) * g;
        const double v = beta2 * double(e.v[i]) + (1.0 - beta2) * g * g;
        e.m[i] = float(m);
        e.v[i] = float(v);
        e.value[i] = float(double(e.value[i]) -
                           lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
      }
    }
  }

  // ---- checkpointing -----------------------------------------------------

  /// Writes `<prefix>.manifest` (text: name, shape, float offset, count) and
  /// `<prefix>.bin` (value, m, v arrays back to back as float32).
  void save(const std::string& prefix) const {
    std::ofstream manifest(prefix + ".manifest");
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!manifest || !bin)
      throw Error("cannot write checkpoint '" + prefix + "'");
    manifest << "gsup-params 1\n";
    manifest << "seed " << seed_ << "\n";
    manifest << "step " << step_ << "\n";
    std::size_t offset = 0;
    for (const auto& [n, e] : entries_) {
      manifest << n << " " << e.shape.size();
      for (int d : e.shape) manifest << " " << d;
      manifest << " " << offset << " " << e.value.size() << " "
               << (e.trainable ? 1 : 0) << "\n";
      auto dump = [&](const std::vector<float>& v) {
        bin.write(reinterpret_cast<const char*>(v.data()),
                  std::streamsize(v.size() * sizeof(float)));
        offset += v.size();
      };
      dump(e.value);
      dump(e.m);
      dump(e.v);
    }
    if (!manifest || !bin)
      throw Error("checkpoint write failed for '" + prefix + "'");
  }

  /// Replaces the store contents from a checkpoint written by save().
  void load(const std::string& prefix) {
    std::ifstream manifest(prefix + ".manifest");
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!manifest || !bin)
      throw Error("cannot open checkpoint '" + prefix + "'");
    std::string magic;
    int version = 0;
    manifest >> magic >> version;
    if (magic != "gsup-params" || version != 1)
      throw Error("'" + prefix + "' is not a parameter checkpoint");
    std::string key;
    manifest >> key >> seed_;
    if (key != "seed") throw Error("checkpoint manifest missing seed");
    manifest >> key >> step_;
    if (key != "step") throw Error("checkpoint manifest missing step");
    entries_.clear();
    std::string name;
    while (manifest >> name) {
      std::size_t ndim = 0, offset = 0, count = 0;
      int trainable = 1;
      manifest >> ndim;
      Shape shape(ndim);
      for (std::size_t i = 0; i < ndim; ++i) manifest >> shape[i];
      manifest >> offset >> count >> trainable;
      if (!manifest)
        throw Error("truncated checkpoint manifest at '" + name + "'");
      if (shape_numel(shape) != count)
        throw Error("checkpoint shape/count mismatch at '" + name + "'");
      ParamEntry& e = emplace(name, shape);
      e.trainable = trainable != 0;
      bin.seekg(std::streamoff(offset * sizeof(float)));
      auto slurp = [&](std::vector<float>& v) {
        bin.read(reinterpret_cast<char*>(v.data()),
                 std::streamsize(v.size() * sizeof(float)));
      };
      slurp(e.value);
      slurp(e.m);
      slurp(e.v);
      if (!bin) throw Error("truncated checkpoint data at '" + name + "'");
    }
  }

 private:
  std::uint64_t seed_;
  std::int64_t step_ = 0;
  std::vector<std::pair<std::string, ParamEntry>> entries_;  // insertion order

  ParamEntry* find(const std::string& name) {
    for (auto& [n, e] : entries_)
      if (n == name) return &e;
    return nullptr;
  }

  ParamEntry& checked(ParamEntry& e, const std::string& name,
                      const Shape& shape) {
    if (e.shape != shape)
      throw Error("parameter '" + name + "' shape " + shape_str(e.shape) +
                  " conflicts with requested " + shape_str(shape));
    return e;
  }

  ParamEntry& emplace(const std::string& name, const Shape& shape) {
    const std::size_t n = shape_numel(shape);
    entries_.push_back({name, ParamEntry{}});
    ParamEntry& e = entries_.back().second;
    e.shape = shape;
    e.value.assign(n, 0.0f);
    e.grad.assign(n, 0.0f);
    e.m.assign(n, 0.0f);
    e.v.assign(n, 0.0f);
    return e;
  }
};

/// Binds store parameters into one tape as leaf tensors and collects their
/// gradients back (accumulating, so several tapes can contribute to a step).
template <class T>
class ParamBinding {
 public:
  ParamBinding(Graph<T>& graph, ParamStore& store)
      : graph_(&graph), store_(&store) {}

  Tensor<T> operator()(const std::string& name) {
    ParamEntry& e = store_->entry(name);
    for (auto& [n, t] : bound_)
      if (n == name) return t;
    std::vector<T> data(e.value.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = T(e.value[i]);
    Tensor<T> t = graph_->input(e.shape, data, "param");
    bound_.push_back({name, t});
    return t;
  }

  /// Accumulate this tape's gradients into the store.
  void collect() {
    for (auto& [name, t] : bound_) {
      ParamEntry& e = store_->entry(name);
      const std::vector<T>& g = graph_->grad(t);
      for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += float(g[i]);
    }
  }

 private:
  Graph<T>* graph_;
  ParamStore* store_;
  std::vector<std::pair<std::string, Tensor<T>>> bound_;
};

}  // namespace gsup
