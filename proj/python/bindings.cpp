#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "arscr/cli.hpp"
#include "arscr/config.hpp"
#include "arscr/error.hpp"
#include "arscr/features.hpp"
#include "arscr/label_mapping.hpp"
#include "arscr/model.hpp"
#include "arscr/reprogram.hpp"
#include "arscr/training.hpp"

namespace py = pybind11;
using namespace arscr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Waveform to_waveform(const FloatArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D waveform");
  return Waveform{std::vector<float>(a.data(), a.data() + a.size()), kSampleRate};
}

LabelMapping mapping_from(const std::vector<std::vector<int>>& sources, std::size_t num_sources) {
  LabelMapping m;
  m.num_sources = num_sources;
  m.k = sources.empty() ? 0 : sources.front().size();
  m.sources = sources;
  m.validate();
  return m;
}

ClassRepresentations reps_from(const std::vector<std::vector<double>>& vectors) {
  ClassRepresentations r;
  r.vectors = vectors;
  for (std::size_t i = 0; i < vectors.size(); ++i) r.class_names.push_back(std::to_string(i));
  return r;
}

}  // namespace

PYBIND11_MODULE(_arscr, m) {
  m.doc() = "Adversarial reprogramming for low-resource spoken command recognition";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "log_mel",
      [](const FloatArray& samples) { return to_array(log_mel(to_waveform(samples), MelConfig{})); },
      py::arg("samples"), "Log-mel features [frames, 40] of a 16 kHz waveform.");

  m.def(
      "spec_augment_mask",
      [](std::size_t frames, std::size_t bins, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(spec_augment_mask(frames, bins, SpecAugmentConfig{}, rng));
      },
      py::arg("frames"), py::arg("bins"), py::arg("seed"));

  m.def(
      "parameter_count",
      [](std::size_t num_classes) {
        ModelConfig cfg;
        cfg.num_classes = num_classes;
        return init_model(cfg, 0).params.count();
      },
      py::arg("num_classes") = 35, "Parameter count of the default acoustic model.");

  m.def(
      "forward",
      [](const FloatArray& mel, std::uint64_t seed, std::size_t num_classes) {
        ModelConfig cfg;
        cfg.num_classes = num_classes;
        AcousticModel model = init_model(cfg, seed);
        Graph g;
        AmOutput o = forward_am(g, cfg, model.params, g.constant(to_tensor(mel)));
        return py::make_tuple(to_array(g.value(o.logits)), to_array(g.value(o.embedding)),
                              to_array(g.value(o.attention)));
      },
      py::arg("mel"), py::arg("seed") = 0, py::arg("num_classes") = 35,
      "Logits, embedding and attention weights of a freshly initialized model.");

  m.def(
      "reprogram_full",
      [](const FloatArray& x, const FloatArray& theta) {
        ReprogramLayer layer;
        layer.mode = ReprogramMode::Full;
        layer.params.add(kThetaName, to_tensor(theta));
        return to_array(reprogram_full(to_tensor(x), layer));
      },
      py::arg("x"), py::arg("theta"));

  m.def(
      "reprogram_pad",
      [](const FloatArray& x, const FloatArray& theta) {
        ReprogramLayer layer;
        layer.mode = ReprogramMode::PadMask;
        layer.mask = pad_mask(std::size_t(x.size()), std::size_t(theta.size()));
        layer.params.add(kThetaName, to_tensor(theta));
        return to_array(reprogram_pad(to_tensor(x), layer));
      },
      py::arg("x"), py::arg("theta"));

  m.def(
      "cosine_similarity_matrix",
      [](const std::vector<std::vector<double>>& targets, const std::vector<std::vector<double>>& sources) {
        SimilarityMatrix s = cosine_similarity_matrix(reps_from(targets), reps_from(sources));
        py::array_t<double> out({s.num_targets, s.num_sources});
        std::copy(s.values.begin(), s.values.end(), out.mutable_data());
        return out;
      },
      py::arg("targets"), py::arg("sources"));

  m.def(
      "build_similarity_mapping",
      [](const DoubleArray& sim, std::size_t k) {
        if (sim.ndim() != 2) throw ShapeError("similarity matrix must be 2-D");
        SimilarityMatrix s;
        s.num_targets = std::size_t(sim.shape(0));
        s.num_sources = std::size_t(sim.shape(1));
        s.values.assign(sim.data(), sim.data() + sim.size());
        return build_similarity_mapping(s, k).sources;
      },
      py::arg("similarity"), py::arg("k"));

  m.def(
      "build_random_mapping",
      [](std::size_t num_sources, std::size_t num_targets, std::size_t k, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return build_random_mapping(num_sources, num_targets, k, rng).sources;
      },
      py::arg("num_sources"), py::arg("num_targets"), py::arg("k"), py::arg("seed"));

  m.def(
      "aggregate_probs",
      [](const DoubleArray& probs, const std::vector<std::vector<int>>& mapping) {
        Shape shape(probs.shape(), probs.shape() + probs.ndim());
        TensorD p(shape, std::vector<double>(probs.data(), probs.data() + probs.size()));
        return to_array(aggregate_probs(p, mapping_from(mapping, shape.empty() ? 0 : shape.back())));
      },
      py::arg("probs"), py::arg("mapping"));

  m.def("rel_improvement", &rel_improvement, py::arg("acc"), py::arg("baseline_acc"));
  m.def("mean_std", &mean_std, py::arg("values"), "Mean and sample standard deviation.");

  m.def(
      "load_wav",
      [](const std::filesystem::path& p) {
        Waveform w = load_wav(p);
        const std::size_t n = w.samples.size();
        return to_array(Tensor(Shape{n}, std::move(w.samples)));
      },
      py::arg("path"));
  m.def(
      "write_wav", [](const std::filesystem::path& p, const FloatArray& s) { write_wav(p, to_waveform(s)); },
      py::arg("path"), py::arg("samples"));

  m.def(
      "parse_config",
      [](const std::string& text) {
        CliConfig c = parse_config(nlohmann::json::parse(text));
        py::dict d;
        d["regime"] = to_string(c.train.regime);
        d["epochs"] = c.train.epochs;
        d["batch_size"] = c.train.batch_size;
        d["lr_am"] = c.train.lr_am;
        d["lr_theta"] = c.train.lr_theta;
        d["k"] = c.train.k;
        d["mapping"] = to_string(c.train.mapping);
        d["runs"] = c.runs;
        d["mel_bins"] = c.train.mel.mel_bins;
        return d;
      },
      py::arg("json_text"), "Validates a configuration document and returns its main fields.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the arscr tool in-process; returns (exit_code, stdout, stderr).");
}
