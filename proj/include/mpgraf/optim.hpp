#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mpgraf/tape.hpp"

namespace mpgraf {

/// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8). State is
/// keyed by parameter name; frozen parameters are neither moved nor does
/// their state advance.
template <class T>
class Adam {
 public:
  struct Hyper {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
  };

  struct State {
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t t = 0;
  };

  explicit Adam(Hyper h = {}) : hyper_(h) {}

  Hyper& hyper() { return hyper_; }
  const State* state_of(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? nullptr : &it->second;
  }

  void step(Parameter<T>& p) {
    if (!p.trainable || !p.has_grad()) return;
    State& st = state_[p.name];
    if (st.m.data.empty()) {
      st.m = Tensor<T>(p.value.shape);
      st.v = Tensor<T>(p.value.shape);
    }
    st.t += 1;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]);
      double m = b1 * static_cast<double>(st.m.data[i]) + (1.0 - b1) * g;
      double v = b2 * static_cast<double>(st.v.data[i]) + (1.0 - b2) * g * g;
      st.m.data[i] = static_cast<T>(m);
      st.v.data[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p.value.data[i] -= static_cast<T>(
          static_cast<double>(hyper_.lr) * mhat /
          (std::sqrt(vhat) + static_cast<double>(hyper_.eps)));
    }
  }

  template <class Range>
  void step_all(Range&& params) {
    for (auto& p : params) step(p);
  }

  void reset() { state_.clear(); }

 private:
  Hyper hyper_;
  std::map<std::string, State> state_;
};

}  // namespace mpgraf
