#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace star {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// One value in the define-by-run graph. Leaves (parameters, inputs) have no
// backward rule; op results hold strong references to the nodes they read.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-filled gradient buffer, allocated on first use.
  std::span<double> grad_buffer();
};

// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Creates an op result. When grad mode is off or no input requires a
  // gradient, the backward rule and parent links are dropped.
  static Tensor make_result(Shape shape, std::vector<double> value,
                            std::initializer_list<Tensor> inputs,
                            std::function<void(Node&)> backward);
  static Tensor make_result(Shape shape, std::vector<double> value,
                            const std::vector<Tensor>& inputs,
                            std::function<void(Node&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  // Product of all dimensions but the last (1 for a scalar).
  std::size_t rows() const;
  // Last dimension (1 for a scalar).
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse-mode sweep from this scalar, seeded with d(self)/d(self) = 1.
  void backward() const;

  // Deep copy of the value with no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Grad mode is thread-local; evaluation passes disable it to skip recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Nodes reachable from root in topological order (inputs before outputs).
std::vector<Node*> topological_order(Node& root);

}  // namespace star
