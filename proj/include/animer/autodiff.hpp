#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "animer/tensor.hpp"

namespace animer::ad {

class Graph;

/// Handle to one node of a Graph.
struct Value {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const std::vector<std::size_t>& shape() const;
};

struct LeafCheck {
  std::string name;
  double max_rel_err = 0.0;
  bool nonfinite = false;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double max_rel_err = 0.0;
  bool all_finite = true;
};

/// Recorded straight-line program over tensors. Nodes are appended in
/// topological order; leaves are named inputs (bound at evaluation time),
/// named parameters (stored in the graph, optionally trainable) and
/// anonymous constants. Evaluation and reverse-mode gradients are pure:
/// identical graph + bindings give bit-identical results.
class Graph {
public:
  using Forward = std::function<Tensor(const std::vector<const Tensor*>&)>;
  using Backward = std::function<std::vector<Tensor>(
      const std::vector<const Tensor*>&, const Tensor&, const Tensor&)>;

  Value input(const std::string& name, std::vector<std::size_t> shape);
  Value param(const std::string& name, Tensor initial, bool trainable = true);
  Value constant(Tensor value);

  Value op(const std::string& op_name, std::vector<Value> inputs,
           std::vector<std::size_t> out_shape, Forward fwd, Backward bwd);

  void mark_output(const std::string& name, Value v);

  void set_param(const std::string& name, Tensor value);
  const Tensor& param_value(const std::string& name) const;
  std::vector<std::string> param_names(bool trainable_only = true) const;
  bool has_param(const std::string& name) const;

  /// Forward pass; returns all marked outputs.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs = {}) const;

  /// Value of a single marked output.
  Tensor evaluate_one(const std::string& output, const std::map<std::string, Tensor>& inputs = {}) const;

  /// d(output)/d(leaf) for every trainable parameter; zero tensors for
  /// parameters the output does not depend on. Output must be scalar.
  std::map<std::string, Tensor> gradient(const std::string& scalar_output,
                                         const std::map<std::string, Tensor>& inputs = {}) const;

  /// Central-difference audit of gradient(). probes_per_leaf == 0 probes
  /// every element; otherwise a deterministic subset of that size.
  GradCheckReport grad_check(const std::string& scalar_output,
                             const std::map<std::string, Tensor>& inputs, double step,
                             std::size_t probes_per_leaf = 0);

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<std::size_t>& shape_of(std::size_t id) const { return nodes_[id].shape; }

private:
  enum class Kind { Input, Param, Const, Op };

  struct Node {
    Kind kind;
    std::string name;  // leaf or op name
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> shape;
    Forward fwd;
    Backward bwd;
    std::size_t leaf_index = 0;  // into params_ for Kind::Param
  };

  struct ParamSlot {
    std::string name;
    Tensor value;
    bool trainable;
  };

  void forward_values(const std::map<std::string, Tensor>& inputs,
                      std::vector<Tensor>& values) const;
  std::size_t output_id(const std::string& name) const;

  std::vector<Node> nodes_;
  std::vector<ParamSlot> params_;
  std::map<std::string, std::size_t> param_index_;
  std::map<std::string, std::size_t> input_index_;  // name -> node id
  std::map<std::string, std::size_t> outputs_;
};

// ---- primitive builders ----------------------------------------------------

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value divide(Value a, Value b);
Value scale(Value a, double c);
Value add_const(Value a, double c);
Value neg(Value a);
Value exp(Value a);
Value log(Value a);
Value sqrt(Value a);
Value abs(Value a);
Value square(Value a);
Value sigmoid(Value a);
Value gelu(Value a);

Value sum(Value a);        // -> scalar
Value mean(Value a);       // -> scalar
Value row_sum(Value a);    // (r,c) -> (r,1)
Value col_sum(Value a);    // (r,c) -> (1,c)

Value matmul(Value a, Value b);
Value transpose(Value a);
Value reshape(Value a, std::vector<std::size_t> shape);
Value concat_cols(std::vector<Value> parts);
Value concat_rows(std::vector<Value> parts);
Value slice_cols(Value a, std::size_t from, std::size_t count);
Value slice_rows(Value a, std::size_t from, std::size_t count);
Value gather_rows(Value a, std::vector<std::size_t> indices);

Value softmax_rows(Value a);
Value normalize_rows(Value a);  // unit L2 rows

/// Axis-angle 3-vector to 3x3 rotation matrix, series-expanded near zero.
Value rodrigues(Value axis_angle);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }

}  // namespace animer::ad
