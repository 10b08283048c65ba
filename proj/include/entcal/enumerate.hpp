#pragma once

// Depth-first enumeration of prefixes with cloned cursors.
//
// Walks are split into fixed partitions (the root node, then one subtree per
// leading token). Partitions may run on separate threads; each owns its
// visitor, and callers merge visitors in partition order, so results do not
// depend on the worker count.

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>

#include "entcal/model.hpp"

namespace entcal {

/// Cursors over several models advanced in lockstep. Cursor 0 leads: its
/// distribution weights the walk.
class CursorBundle {
 public:
  explicit CursorBundle(std::span<const ConditionalModel* const> models) {
    for (const auto* m : models) cursors_.push_back(m->start());
  }
  CursorBundle(std::initializer_list<const ConditionalModel*> models)
      : CursorBundle(std::span<const ConditionalModel* const>(models.begin(), models.size())) {}

  CursorBundle clone() const {
    CursorBundle b;
    for (const auto& c : cursors_) b.cursors_.push_back(c->clone());
    return b;
  }
  void push(Token t) {
    for (auto& c : cursors_) c->push(t);
  }
  const Distribution& lead() const { return cursors_[0]->dist(); }
  const Cursor& operator[](std::size_t i) const { return *cursors_[i]; }
  std::size_t size() const noexcept { return cursors_.size(); }

 private:
  CursorBundle() = default;
  std::vector<std::unique_ptr<Cursor>> cursors_;
};

template <class State>
struct WalkNode {
  std::span<const Token> prefix;
  double log_weight;  // log probability of the prefix under the lead model
  const State& state;
};

namespace detail {

template <class State, class Visit>
void walk_from(const State& state, Sequence& prefix, double log_weight, std::size_t M,
               std::size_t max_depth, Visit& visit) {
  if (!visit(WalkNode<State>{prefix, log_weight, state}) || prefix.size() >= max_depth) return;
  const Distribution& lead = state.lead();
  for (std::size_t j = 0; j < M; ++j) {
    State child = state.clone();
    child.push(static_cast<Token>(j));
    prefix.push_back(static_cast<Token>(j));
    walk_from(child, prefix, log_weight + safe_log(lead[j]), M, max_depth, visit);
    prefix.pop_back();
  }
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the
/// first exception.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Visits prefixes of length 0..max_depth. Visitor: bool(const WalkNode&),
/// returning whether to descend. Returns the M+1 partition visitors in order:
/// the root, then the subtree under each leading token.
template <class Visitor, class State, class Make>
std::vector<Visitor> walk_partitioned(const State& root, std::size_t M, std::size_t max_depth,
                                      std::size_t workers, Make&& make) {
  std::vector<Visitor> parts;
  parts.reserve(M + 1);
  for (std::size_t i = 0; i <= M; ++i) parts.push_back(make());
  Sequence empty;
  if (!parts[0](WalkNode<State>{empty, 0.0, root}) || max_depth == 0) return parts;
  const Distribution& lead = root.lead();
  detail::parallel_for(M, workers, [&](std::size_t j) {
    State child = root.clone();
    child.push(static_cast<Token>(j));
    Sequence prefix{static_cast<Token>(j)};
    detail::walk_from(child, prefix, safe_log(lead[j]), M, max_depth, parts[j + 1]);
  });
  return parts;
}

/// log P(w) for every w in [M]^T, in lexicographic order.
inline std::vector<double> log_prob_table(const ConditionalModel& model, const ExactOptions& opts = {}) {
  const auto& spec = model.spec();
  const std::size_t n = opts.budget.require(spec.M(), spec.T(), "log_prob_table");
  std::vector<double> out(n, kNegInf);
  struct Leaves {
    std::vector<double>* out;
    std::size_t M, T;
    bool operator()(const WalkNode<CursorBundle>& node) {
      if (node.prefix.size() < T) return true;
      (*out)[sequence_index(node.prefix, M)] = node.log_weight;
      return false;
    }
  };
  CursorBundle root{&model};
  walk_partitioned<Leaves>(root, spec.M(), spec.T(), opts.workers,
                           [&] { return Leaves{&out, spec.M(), spec.T()}; });
  return out;
}

inline std::vector<double> prob_table(const ConditionalModel& model, const ExactOptions& opts = {}) {
  auto lp = log_prob_table(model, opts);
  for (double& x : lp) x = x == kNegInf ? 0.0 : std::exp(x);
  return lp;
}

}  // namespace entcal
