#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gradcheck {

namespace {

double evaluate(const std::vector<Tensor<double>>& inputs, const Fn& fn) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return tape.value(fn(tape, vars))[0];
}

double relative(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff) / scale;
}

}  // namespace

Result check(std::vector<Tensor<double>> inputs, std::vector<Parameter<double>*> params, const Fn& fn, double step) {
  for (auto* p : params) p->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    tape.backward(fn(tape, vars));
    for (Var v : vars) analytic.push_back(tape.has_grad(v) ? tape.grad(v).data : std::vector<double>(tape.value(v).size()));
    for (auto* p : params) analytic.push_back(p->grad.data);
  }

  Result result;
  auto record = [&](const std::vector<double>& numeric, std::size_t slot, const std::string& name) {
    const double e = relative(analytic[slot], numeric);
    if (e >= result.max_relative_error) {
      result.max_relative_error = e;
      result.worst = name;
    }
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double x = inputs[k][i];
      inputs[k][i] = x + step;
      const double up = evaluate(inputs, fn);
      inputs[k][i] = x - step;
      const double down = evaluate(inputs, fn);
      inputs[k][i] = x;
      numeric[i] = (up - down) / (2 * step);
    }
    record(numeric, k, "input " + std::to_string(k));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k]->value.data;
    std::vector<double> numeric(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = values[i];
      values[i] = x + step;
      const double up = evaluate(inputs, fn);
      values[i] = x - step;
      const double down = evaluate(inputs, fn);
      values[i] = x;
      numeric[i] = (up - down) / (2 * step);
    }
    record(numeric, inputs.size() + k, "param " + params[k]->name);
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

Var probe(Tape<double>& tape, Var x, std::vector<double> c) {
  const auto& v = tape.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += c[i] * v[i];
  return tape.record(Tensor<double>({1}, s), {x}, [x, c = std::move(c)](Tape<double>& t, const Tensor<double>& g) {
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * c[i];
  });
}

}  // namespace gradcheck
