#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>

#include "hipss/commands.hpp"
#include "hipss/config.hpp"
#include "hipss/errors.hpp"
#include "hipss/metrics.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

hipss::RunConfig parse_config(const std::string& text) {
  hipss::RunConfig config = hipss::config_from_json(json::parse(text));
  config.validate();
  return config;
}

py::tuple wrap(const hipss::CommandResult& r) {
  return py::make_tuple(r.output.dump(), r.summary, r.written.string());
}

}  // namespace

PYBIND11_MODULE(_hipss, m) {
  m.doc() = "Hierarchical text-guided pooling with scale-shift adapters";

  auto config_error = py::register_exception<hipss::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<hipss::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<hipss::DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<hipss::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  (void)config_error;

  m.def("default_config", [] { return hipss::to_json(hipss::RunConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) { return hipss::to_json(parse_config(text)).dump(); });

  m.def("generate", [](const std::string& c) { return wrap(hipss::cmd_generate(parse_config(c))); });
  m.def("train", [](const std::string& c) { return wrap(hipss::cmd_train(parse_config(c))); });
  m.def(
      "evaluate",
      [](const std::string& c, std::optional<std::string> checkpoint, const std::string& split) {
        std::optional<std::filesystem::path> path;
        if (checkpoint) path = *checkpoint;
        return wrap(hipss::cmd_eval(parse_config(c), path, split));
      },
      py::arg("config"), py::arg("checkpoint") = py::none(), py::arg("split") = "test");
  m.def(
      "localize",
      [](const std::string& c, const std::string& checkpoint, const std::string& split) {
        return wrap(hipss::cmd_localize(parse_config(c), checkpoint, split));
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split") = "test");
  m.def("gradcheck", [](const std::string& c) { return wrap(hipss::cmd_gradcheck(parse_config(c))); });
  m.def(
      "merge",
      [](const std::string& c, const std::string& checkpoint, std::optional<std::string> output) {
        std::optional<std::filesystem::path> path;
        if (output) path = *output;
        return wrap(hipss::cmd_merge(parse_config(c), checkpoint, path));
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("output") = py::none());
  m.def("params", [](const std::string& c) { return wrap(hipss::cmd_params(parse_config(c))); });

  m.def("count_trainable", [](std::size_t dim, std::size_t hidden, std::size_t depth, bool attention) {
    return hipss::count_trainable({dim, hidden, depth, hipss::kSitesPerBlock, attention});
  }, py::arg("dim") = 64, py::arg("hidden") = 32, py::arg("depth") = 2, py::arg("attention") = true);
  m.def("attach_depth", &hipss::attach_depth, py::arg("blocks"), py::arg("depth"));
  m.def("ssf_forward", [](const hipss::Vector& x, const hipss::Vector& gamma, const hipss::Vector& beta) {
    return hipss::ssf_forward(x, hipss::SsfParams{gamma, beta});
  });
  m.def(
      "refinement_score",
      [](const hipss::Vector& h, std::optional<hipss::Vector> text, double lambda, double alpha) {
        return hipss::refinement_score(h, text, hipss::RefinementConfig{lambda, alpha});
      },
      py::arg("h"), py::arg("text"), py::arg("lam") = 10.0, py::arg("alpha") = 0.2);
  m.def("softmax", [](const hipss::Vector& z) { return hipss::softmax(z); });
  m.def("cosine", [](const hipss::Vector& a, const hipss::Vector& b) { return hipss::cosine(a, b); });
  m.def("auc", [](const hipss::Vector& s, const std::vector<int>& l) { return hipss::auc(s, l); });
  m.def("dice", [](const std::vector<int>& p, const std::vector<int>& t) { return hipss::dice(p, t); });
}
