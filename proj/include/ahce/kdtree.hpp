#pragma once

// Incremental KD-tree over points in R^d. Points get consecutive ids in
// insertion order.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ahce/error.hpp"

namespace ahce {

class KdTree {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  explicit KdTree(std::size_t dim) : dim_(dim) {
    if (dim == 0) fail(Errc::validation, "kd-tree dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const double> point(std::size_t id) const { return {coords_.data() + id * dim_, dim_}; }

  std::size_t insert(std::span<const double> p) {
    check(p);
    const std::size_t id = nodes_.size();
    coords_.insert(coords_.end(), p.begin(), p.end());
    nodes_.push_back({});
    if (id == 0) return id;
    std::size_t cur = 0;
    std::size_t depth = 0;
    for (;;) {
      const std::size_t axis = depth % dim_;
      auto& next = p[axis] < point(cur)[axis] ? nodes_[cur].left : nodes_[cur].right;
      if (next == npos) {
        next = id;
        nodes_[id].axis = (depth + 1) % dim_;
        return id;
      }
      cur = next;
      ++depth;
    }
  }

  struct Hit {
    std::size_t id = npos;
    double distance = std::numeric_limits<double>::infinity();
  };

  /// Closest point; ties go to the lowest id.
  Hit nearest(std::span<const double> q) const {
    check(q);
    Hit best;
    if (!nodes_.empty()) nearest(0, q, best);
    if (best.id != npos) best.distance = std::sqrt(best.distance);
    return best;
  }

  /// Lowest-id point within `radius` (inclusive), or a miss.
  Hit first_within(std::span<const double> q, double radius) const {
    check(q);
    Hit best;
    if (!nodes_.empty() && radius >= 0) first_within(0, q, radius * radius, best);
    if (best.id != npos) best.distance = std::sqrt(best.distance);
    return best;
  }

 private:
  struct Node {
    std::size_t left = npos;
    std::size_t right = npos;
    std::size_t axis = 0;
  };

  void check(std::span<const double> p) const {
    if (p.size() != dim_) fail(Errc::dimension_mismatch, "kd-tree point has wrong dimension");
  }

  double squared_distance(std::size_t id, std::span<const double> q) const {
    auto p = point(id);
    double s = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      double d = p[k] - q[k];
      s += d * d;
    }
    return s;
  }

  void nearest(std::size_t id, std::span<const double> q, Hit& best) const {
    const double d = squared_distance(id, q);
    if (d < best.distance || (d == best.distance && id < best.id)) best = {id, d};
    const auto& n = nodes_[id];
    const double diff = q[n.axis] - point(id)[n.axis];
    const std::size_t near = diff < 0 ? n.left : n.right;
    const std::size_t far = diff < 0 ? n.right : n.left;
    if (near != npos) nearest(near, q, best);
    if (far != npos && diff * diff <= best.distance) nearest(far, q, best);
  }

  void first_within(std::size_t id, std::span<const double> q, double r2, Hit& best) const {
    // Children always have larger ids than their parent.
    if (best.id != npos && id > best.id) return;
    const double d = squared_distance(id, q);
    if (d <= r2 && id < best.id) best = {id, d};
    const auto& n = nodes_[id];
    const double diff = q[n.axis] - point(id)[n.axis];
    // Left subtree holds coordinates strictly below the split.
    if (n.left != npos && !(diff > 0 && diff * diff > r2)) first_within(n.left, q, r2, best);
    if (n.right != npos && !(diff < 0 && diff * diff > r2)) first_within(n.right, q, r2, best);
  }

  std::size_t dim_;
  std::vector<double> coords_;
  std::vector<Node> nodes_;
};

}  // namespace ahce
