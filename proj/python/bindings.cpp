#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "seggan/convcrf.hpp"
#include "seggan/discriminator.hpp"
#include "seggan/error.hpp"
#include "seggan/gradsuite.hpp"
#include "seggan/losses.hpp"
#include "seggan/ops.hpp"
#include "seggan/trainer.hpp"

namespace py = pybind11;
using namespace seggan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw ConfigError("expected a 4-d array [N,C,H,W]");
  Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
          static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a({t.n(), t.c(), t.h(), t.w()});
  std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
  return a;
}

LabelMap to_labels(const LabelArray& a) {
  if (a.ndim() != 3) throw ConfigError("expected a 3-d label array [N,H,W]");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
             static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

LabelArray from_labels(const LabelMap& m) {
  LabelArray a({m.n, m.h, m.w});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

CrfParams crf_params(int classes, std::optional<Array> compat,
                     std::array<double, 2> kernel_weights) {
  CrfParams p = CrfParams::potts(classes);
  if (compat) {
    if (compat->size() != static_cast<py::ssize_t>(p.compat.size())) {
      throw ConfigError("compat must have C*C entries");
    }
    std::copy(compat->data(), compat->data() + compat->size(), p.compat.begin());
  }
  p.kernel_weights = kernel_weights;
  return p;
}

LossConfig loss_config(const std::string& reduction, double epsilon) {
  LossConfig c;
  c.epsilon = epsilon;
  if (reduction == "sum") {
    c.reduction = Reduction::Sum;
  } else if (reduction != "mean") {
    throw ConfigError("reduction must be 'mean' or 'sum'");
  }
  return c;
}

py::dict loss_dict(const LossResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["grad"] = to_array(r.grad);
  if (r.grad_other.size() > 0) d["grad_other"] = to_array(r.grad_other);
  d["count"] = r.count;
  return d;
}

ConfusionMatrix confusion(const LabelArray& pred, const LabelArray& truth, int classes) {
  ConfusionMatrix cm(classes);
  accumulate(cm, to_labels(pred), to_labels(truth));
  return cm;
}

py::list samples(const std::vector<Sample>& split) {
  py::list out;
  for (const auto& s : split) {
    out.append(py::make_tuple(to_array(s.image), from_labels(s.labels), s.id));
  }
  return out;
}

RunConfig config_from(const std::string& json_text) {
  if (json_text.empty()) return RunConfig{};
  try {
    return run_config_from_json(nlohmann::json::parse(json_text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Seg-GAN core: tensor ops, ConvCRF, networks, losses, metrics and training";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalDivergence>(m, "NumericalDivergence", PyExc_ArithmeticError);

  m.def(
      "conv2d",
      [](const Array& x, const Array& w, std::optional<Array> b, int stride, int padding,
         int dilation) {
        Tensor wt = to_tensor(w);
        ConvSpec spec{wt.c(), wt.n(), wt.h(), stride, padding, dilation};
        std::vector<double> bias;
        if (b) bias.assign(b->data(), b->data() + b->size());
        return to_array(conv2d_forward(to_tensor(x), wt, bias, spec));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1,
      py::arg("padding") = 0, py::arg("dilation") = 1);
  m.def("softmax_channels", [](const Array& x) { return to_array(softmax_channels(to_tensor(x))); });
  m.def("sigmoid", [](const Array& x) { return to_array(sigmoid_forward(to_tensor(x))); });
  m.def("leaky_relu", [](const Array& x, double slope) {
    return to_array(leaky_relu_forward(to_tensor(x), slope));
  });
  m.def("bilinear_upsample", [](const Array& x, int factor) {
    return to_array(bilinear_upsample(to_tensor(x), factor));
  });

  m.def(
      "convcrf_forward",
      [](const Array& image, const Array& prob, int filter_size, int iterations,
         std::optional<Array> compat, std::array<double, 2> kernel_weights, bool oracle) {
        ConvCrfConfig cfg = ConvCrfConfig::defaults(filter_size, iterations);
        Tensor p = to_tensor(prob);
        CrfParams params = crf_params(p.c(), compat, kernel_weights);
        Tensor img = to_tensor(image);
        return to_array(oracle ? brute_force_oracle(img, p, cfg, params)
                               : convcrf_forward(img, p, cfg, params));
      },
      py::arg("image"), py::arg("prob"), py::arg("filter_size") = 3,
      py::arg("iterations") = 3, py::arg("compat") = py::none(),
      py::arg("kernel_weights") = std::array<double, 2>{1.0, 1.0}, py::arg("oracle") = false);

  m.def(
      "one_hot",
      [](const LabelArray& labels, int classes, double smoothing) {
        return to_array(one_hot_encode(to_labels(labels), classes, smoothing));
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("smoothing") = 0.0);

  m.def(
      "loss_discriminator",
      [](const Array& fake, const Array& real, const std::string& reduction, double eps) {
        return loss_dict(loss_discriminator(to_tensor(fake), to_tensor(real),
                                            loss_config(reduction, eps)));
      },
      py::arg("conf_fake"), py::arg("conf_real"), py::arg("reduction") = "mean",
      py::arg("epsilon") = 1e-8);
  m.def(
      "loss_ce",
      [](const Array& prob, const LabelArray& labels, const std::string& reduction,
         double eps) {
        return loss_dict(loss_ce(to_tensor(prob), to_labels(labels), loss_config(reduction, eps)));
      },
      py::arg("prob"), py::arg("labels"), py::arg("reduction") = "mean",
      py::arg("epsilon") = 1e-8);
  m.def(
      "loss_adv",
      [](const Array& fake, const std::string& reduction, double eps) {
        return loss_dict(loss_adv(to_tensor(fake), loss_config(reduction, eps)));
      },
      py::arg("conf_fake"), py::arg("reduction") = "mean", py::arg("epsilon") = 1e-8);

  m.def("poly_lr", &poly_lr, py::arg("base_lr"), py::arg("iteration"),
        py::arg("max_iterations"), py::arg("power") = 0.9);

  m.def(
      "confusion_matrix",
      [](const LabelArray& pred, const LabelArray& truth, int classes) {
        ConfusionMatrix cm = confusion(pred, truth, classes);
        py::array_t<std::uint64_t> a({classes, classes});
        std::copy(cm.counts.begin(), cm.counts.end(), a.mutable_data());
        return a;
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_classes"));
  m.def(
      "miou",
      [](const LabelArray& pred, const LabelArray& truth, int classes) {
        return miou(confusion(pred, truth, classes));
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_classes"));
  m.def("predict_labels",
        [](const Array& prob) { return from_labels(predict_labels(to_tensor(prob))); });

  m.def(
      "gen_shapes",
      [](int count, int size, int classes, std::uint64_t seed) {
        ShapesConfig cfg;
        cfg.num_samples = count;
        cfg.image_size = size;
        cfg.num_classes = classes;
        cfg.seed = seed;
        Dataset d = gen_shapes_dataset(cfg);
        return py::make_tuple(samples(d.train), samples(d.val));
      },
      py::arg("count") = 250, py::arg("size") = 64, py::arg("num_classes") = 4,
      py::arg("seed") = 0);

  py::class_<SegNet>(m, "SegNet")
      .def(py::init([](int classes, int base, std::uint64_t seed) {
             SegNetConfig c;
             c.num_classes = classes;
             c.base_channels = base;
             return std::make_unique<SegNet>(c, seed);
           }),
           py::arg("num_classes") = 4, py::arg("base_channels") = 16, py::arg("seed") = 0)
      .def(
          "forward",
          [](SegNet& net, const Array& image, bool train) {
            SegNetOutput out = net.forward(to_tensor(image), train ? Mode::Train : Mode::Eval);
            return py::make_tuple(to_array(out.logits), to_array(out.prob));
          },
          py::arg("image"), py::arg("train") = false)
      .def("predict",
           [](SegNet& net, const Array& image) {
             return from_labels(infer_labels(net, to_tensor(image)));
           })
      .def("parameter_count", &SegNet::parameter_count);

  m.def("load_segnet", [](const std::string& path) { return std::make_unique<SegNet>(load_segnet(path)); });

  py::class_<Discriminator>(m, "Discriminator")
      .def(py::init([](int classes, std::uint64_t seed) {
             return std::make_unique<Discriminator>(DiscriminatorConfig{}, classes, seed);
           }),
           py::arg("num_classes") = 4, py::arg("seed") = 0)
      .def("forward", [](Discriminator& d, const Array& image, const Array& field) {
        return to_array(d.forward(to_tensor(image), to_tensor(field)));
      });

  m.def(
      "grad_suite",
      [](std::uint64_t seed, bool fault) {
        GradSuiteOptions o;
        o.seed = seed;
        o.inject_fault = fault;
        py::list rows;
        for (const auto& r : run_grad_suite(o)) {
          py::dict d;
          d["op"] = r.op;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["entries"] = r.entries_checked;
          d["skipped"] = r.entries_skipped;
          d["passed"] = r.passed();
          rows.append(d);
        }
        return rows;
      },
      py::arg("seed") = 0, py::arg("inject_fault") = false);

  m.def("default_config", []() { return to_json(RunConfig{}).dump(); });
  m.def(
      "train",
      [](const std::string& config_json, const std::string& out_dir, long stop_at) {
        const RunConfig cfg = config_from(config_json);
        const Dataset data = load_run_data(cfg);
        Trainer trainer(cfg, data);
        TrainOptions opts;
        opts.out_dir = out_dir;
        opts.stop_at = stop_at;
        TrainOutputs out;
        {
          py::gil_scoped_release release;
          out = train(trainer, opts);
        }
        py::list losses;
        for (const auto& r : out.losses) {
          losses.append(py::make_tuple(r.iteration, r.l_d, r.l_ce, r.l_adv, r.l_seg, r.lr_seg,
                                       r.lr_disc));
        }
        py::dict d;
        d["losses"] = losses;
        d["miou_curve"] = out.miou_curve;
        d["best_miou"] = out.best_miou;
        d["best_iteration"] = out.best_iteration;
        d["final_miou"] = out.final_miou;
        return d;
      },
      py::arg("config_json") = "", py::arg("out_dir") = "", py::arg("stop_at") = 0);
}
