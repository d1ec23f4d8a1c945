#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinydetr/box.hpp"
#include "tinydetr/checkpoint.hpp"
#include "tinydetr/data.hpp"
#include "tinydetr/errors.hpp"
#include "tinydetr/eval.hpp"
#include "tinydetr/labels.hpp"
#include "tinydetr/loss.hpp"
#include "tinydetr/matching.hpp"
#include "tinydetr/model.hpp"
#include "tinydetr/train.hpp"

namespace py = pybind11;
using namespace tinydetr;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) {
        shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(a.shape(i));
    }
    std::vector<double> values(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (std::size_t d : t.shape()) {
        shape.push_back(static_cast<py::ssize_t>(d));
    }
    py::array_t<double> out(shape);
    auto data = t.data();
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
}

CornerBox corner_from(const BoxValues& v) { return CornerBox{v[0], v[1], v[2], v[3]}; }

BoxForm parse_form(const std::string& name) {
    if (name == "pixel_corner") return BoxForm::pixel_corner;
    if (name == "pixel_xywh") return BoxForm::pixel_xywh;
    if (name == "norm_center") return BoxForm::norm_center;
    throw DataError("unknown box form '" + name +
                    "' (expected pixel_corner, pixel_xywh, or norm_center)");
}

CostMatrix cost_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) {
        throw DataError("cost matrix must be two-dimensional");
    }
    CostMatrix cost(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    auto view = a.unchecked<2>();
    for (py::ssize_t r = 0; r < a.shape(0); ++r) {
        for (py::ssize_t c = 0; c < a.shape(1); ++c) {
            cost.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = view(r, c);
        }
    }
    return cost;
}

py::dict report_dict(const EvalReport& report) {
    py::dict d;
    d["map"] = report.map;
    d["map50"] = report.map50;
    d["mar_10d"] = report.mar_10d;
    d["mar_100d"] = report.mar_100d;
    py::list ap, ap50, has_gt;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        ap.append(report.class_ap[c]);
        ap50.append(report.class_ap50[c]);
        has_gt.append(report.class_has_ground_truth[c]);
    }
    d["class_ap"] = ap;
    d["class_ap50"] = ap50;
    d["class_has_ground_truth"] = has_gt;
    return d;
}

}  // namespace

PYBIND11_MODULE(_tinydetr, m) {
    m.doc() = "desk-scale set-prediction object detector";
    m.attr("__version__") = "0.1.0";
    m.attr("num_classes") = kNumClasses;

    py::register_exception<DataError>(m, "DataFormatError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericFailure", PyExc_ArithmeticError);

    m.def("class_names", [] {
        std::vector<std::string> names;
        for (const char* n : kClassNames) names.emplace_back(n);
        return names;
    });
    m.def("class_name", &class_name, py::arg("class_id"));

    py::class_<GroundTruthObject>(m, "GroundTruth")
        .def(py::init([](const BoxValues& box, std::size_t class_id) {
                 return GroundTruthObject{box, class_id};
             }),
             py::arg("box"), py::arg("class_id"),
             "box is (cx, cy, w, h) normalized to the image size")
        .def_readwrite("box", &GroundTruthObject::box)
        .def_readwrite("class_id", &GroundTruthObject::class_id)
        .def("__repr__", [](const GroundTruthObject& g) {
            return "GroundTruth(box=(" + std::to_string(g.box[0]) + ", " +
                   std::to_string(g.box[1]) + ", " + std::to_string(g.box[2]) + ", " +
                   std::to_string(g.box[3]) + "), class_id=" + std::to_string(g.class_id) + ")";
        });

    py::class_<Detection>(m, "Detection")
        .def(py::init([](const BoxValues& box, std::size_t class_id, double confidence) {
                 return Detection{box, class_id, confidence};
             }),
             py::arg("box"), py::arg("class_id"), py::arg("confidence"))
        .def_readwrite("box", &Detection::box)
        .def_readwrite("class_id", &Detection::class_id)
        .def_readwrite("confidence", &Detection::confidence);

    m.def(
        "iou",
        [](const BoxValues& a, const BoxValues& b) { return iou(corner_from(a), corner_from(b)); },
        py::arg("a"), py::arg("b"), "intersection over union of (x0, y0, x1, y1) boxes");
    m.def(
        "giou",
        [](const BoxValues& a, const BoxValues& b) { return giou(corner_from(a), corner_from(b)); },
        py::arg("a"), py::arg("b"), "generalized IoU of (x0, y0, x1, y1) boxes, in [-1, 1]");
    m.def(
        "box_convert",
        [](const BoxValues& box, const std::string& from, const std::string& to, double image_w,
           double image_h) { return box_convert(box, parse_form(from), parse_form(to), image_w, image_h); },
        py::arg("box"), py::arg("src"), py::arg("dst"), py::arg("image_w"), py::arg("image_h"));

    m.def(
        "hungarian",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& cost) {
            const Assignment a = hungarian(cost_from_array(cost));
            return py::make_tuple(a.prediction_for_target, a.total_cost);
        },
        py::arg("cost"),
        "exact minimum-cost assignment; returns (row per column, total cost) for a\n"
        "grid with at least as many rows as columns");

    m.def(
        "pairwise_cost",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& boxes,
           const std::vector<GroundTruthObject>& targets, double w_class, double w_l1,
           double w_giou) {
            MatchWeights w;
            w.cls = w_class;
            w.l1 = w_l1;
            w.giou = w_giou;
            const CostMatrix cost =
                pairwise_cost(tensor_from_array(logits), tensor_from_array(boxes), targets, w);
            py::array_t<double> out({static_cast<py::ssize_t>(cost.rows()),
                                     static_cast<py::ssize_t>(cost.cols())});
            auto values = cost.values();
            std::copy(values.begin(), values.end(), out.mutable_data());
            return out;
        },
        py::arg("class_logits"), py::arg("boxes"), py::arg("targets"), py::arg("w_class") = 1.0,
        py::arg("w_l1") = 5.0, py::arg("w_giou") = 2.0);

    m.def(
        "set_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& boxes,
           const std::vector<GroundTruthObject>& targets) {
            const std::vector<Tensor> logit_list = {tensor_from_array(logits)};
            const std::vector<Tensor> box_list = {tensor_from_array(boxes)};
            const std::vector<std::vector<GroundTruthObject>> target_list = {targets};
            const LossBreakdown lb = batch_set_loss(logit_list, box_list, target_list);
            py::dict d;
            d["total"] = lb.total.item();
            d["class_loss"] = lb.class_loss.item();
            d["l1_loss"] = lb.l1_loss.item();
            d["giou_loss"] = lb.giou_loss.item();
            d["matched_count"] = lb.matched_count;
            return d;
        },
        py::arg("class_logits"), py::arg("boxes"), py::arg("targets"),
        "matching-based training loss of one prediction set against its targets");

    py::class_<SceneRecipe>(m, "SceneRecipe")
        .def(py::init<>())
        .def_readwrite("seed", &SceneRecipe::seed)
        .def_readwrite("min_objects", &SceneRecipe::min_objects)
        .def_readwrite("max_objects", &SceneRecipe::max_objects)
        .def_readwrite("illumination", &SceneRecipe::illumination)
        .def_readwrite("noise_sigma", &SceneRecipe::noise_sigma)
        .def_readwrite("occlusion_prob", &SceneRecipe::occlusion_prob)
        .def_readwrite("min_scale", &SceneRecipe::min_scale)
        .def_readwrite("max_scale", &SceneRecipe::max_scale)
        .def_readwrite("width", &SceneRecipe::width)
        .def_readwrite("height", &SceneRecipe::height)
        .def("validate", &SceneRecipe::validate);

    py::class_<ImageSample>(m, "ImageSample")
        .def_property_readonly("image",
                               [](const ImageSample& s) { return array_from_tensor(s.image); },
                               "channel-first float64 image, values in [0, 1]")
        .def_readonly("objects", &ImageSample::objects)
        .def_readonly("source_id", &ImageSample::source_id);

    m.def("generate_scene", &generate_scene, py::arg("recipe"), py::arg("index"),
          "render one synthetic dashcam scene; (recipe, index) fully determine the output");

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("desk", &ModelConfig::desk)
        .def_static("full_scale", &ModelConfig::full_scale)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("num_encoder_layers", &ModelConfig::num_encoder_layers)
        .def_readwrite("num_decoder_layers", &ModelConfig::num_decoder_layers)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("num_queries", &ModelConfig::num_queries)
        .def_readwrite("num_classes", &ModelConfig::num_classes)
        .def_readwrite("ffn_hidden", &ModelConfig::ffn_hidden)
        .def_readwrite("patch_size", &ModelConfig::patch_size)
        .def_readwrite("image_height", &ModelConfig::image_height)
        .def_readwrite("image_width", &ModelConfig::image_width)
        .def("validate", &ModelConfig::validate)
        .def("tokens", &ModelConfig::tokens);

    py::class_<Detector>(m, "Detector")
        .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed"))
        .def_static(
            "load",
            [](const std::string& path) { return Detector::from_checkpoint(load_checkpoint(path)); },
            py::arg("path"))
        .def(
            "save",
            [](const Detector& d, const std::string& path) {
                Checkpoint ck;
                d.save_into(ck);
                save_checkpoint(path, ck);
            },
            py::arg("path"))
        .def_property_readonly("config", &Detector::config)
        .def(
            "forward",
            [](const Detector& d,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
                const PredictionSet p = d.forward(tensor_from_array(image));
                return py::make_tuple(array_from_tensor(p.class_logits),
                                      array_from_tensor(p.boxes));
            },
            py::arg("image"),
            "image [3, H, W] -> (class logits [N, C+1], boxes [N, 4] normalized center form)")
        .def(
            "detect",
            [](const Detector& d,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
               double threshold) {
                const PredictionSet p = d.forward(tensor_from_array(image));
                const auto dets = infer_detections(
                    p, threshold, static_cast<double>(d.config().image_width),
                    static_cast<double>(d.config().image_height));
                py::list out;
                for (const InferDetection& det : dets) {
                    py::dict e;
                    e["box"] = py::make_tuple(det.x0, det.y0, det.x1, det.y1);
                    e["class_id"] = det.class_id;
                    e["class_name"] = class_name(det.class_id);
                    e["score"] = det.score;
                    out.append(e);
                }
                return out;
            },
            py::arg("image"), py::arg("threshold") = 0.5,
            "thresholded detections in pixel corner form, no-object slots dropped")
        .def("parameters", [](const Detector& d) {
            py::list out;
            for (const NamedParam& p : d.parameters()) {
                out.append(py::make_tuple(p.name, array_from_tensor(p.tensor)));
            }
            return out;
        });

    m.def(
        "evaluate",
        [](const std::map<std::int64_t, std::vector<Detection>>& detections,
           const std::map<std::int64_t, std::vector<GroundTruthObject>>& ground_truth) {
            return report_dict(evaluate(detections, ground_truth));
        },
        py::arg("detections_by_image"), py::arg("ground_truth_by_image"),
        "corpus metrics: mAP over the IoU grid, mAP50, and mean recall at 10/100 detections");
}
