#include "tinydetr/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tinydetr/data.hpp"
#include "tinydetr/errors.hpp"
#include "tinydetr/eval.hpp"
#include "tinydetr/gradcheck.hpp"
#include "tinydetr/matching.hpp"
#include "tinydetr/model.hpp"
#include "tinydetr/rng.hpp"
#include "tinydetr/train.hpp"

namespace tinydetr {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Wrong invocation shape discovered after flag parsing; maps to exit code 1.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_e(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// ---- generate-data ----

int cmd_generate(std::ostream& out, const std::string& recipe_path, const std::string& out_dir,
                 std::uint64_t count) {
    KvConfig kv = KvConfig::from_file(recipe_path);
    SceneRecipe recipe = SceneRecipe::from_config(kv);
    kv.finish();
    std::vector<ImageSample> samples;
    samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        samples.push_back(generate_scene(recipe, i));
    }
    write_dataset(out_dir, samples);
    const auto hist = class_histogram(samples);
    out << "wrote " << count << " images to " << out_dir << "\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << "  " << class_name(c) << "\t" << hist[c] << "\n";
    }
    return 0;
}

// ---- train ----

int cmd_train(std::ostream& out, const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& val_dir,
              const std::string& resume_path, const std::string& preset) {
    ModelConfig model_base;
    TrainConfig train_base;
    if (preset == "desk") {
        model_base = ModelConfig::desk();
        train_base = TrainConfig::desk();
    } else if (preset == "full_scale") {
        model_base = ModelConfig::full_scale();
        train_base = TrainConfig{};
    } else {
        throw UsageError("unknown preset '" + preset + "' (expected desk or full_scale)");
    }
    KvConfig kv = KvConfig::from_file(config_path);
    const ModelConfig mc = ModelConfig::from_config(kv, model_base);
    const TrainConfig tc = TrainConfig::from_config(kv, train_base);
    kv.finish();

    const auto train_set = load_dataset(data_dir, mc.image_width, mc.image_height);
    std::vector<ImageSample> val_set;
    if (!val_dir.empty()) {
        val_set = load_dataset(val_dir, mc.image_width, mc.image_height);
    }

    std::optional<Trainer> trainer;
    if (!resume_path.empty()) {
        trainer.emplace(load_checkpoint(resume_path), tc);
    } else {
        trainer.emplace(mc, tc);
    }
    out << "training on " << train_set.size() << " images (" << val_set.size()
        << " validation), starting at step " << trainer->step() << "\n";
    const TrainLog log = trainer->run(train_set, val_set, out_dir);
    for (const EpochEval& e : log.evals) {
        out << "epoch " << e.epoch << "\tmap " << fmt4(e.report.map) << "\tmap50 "
            << fmt4(e.report.map50) << "\tmar_10d " << fmt4(e.report.mar_10d) << "\tmar_100d "
            << fmt4(e.report.mar_100d) << "\n";
    }
    if (!log.steps.empty()) {
        const StepRecord& last = log.steps.back();
        out << "final step " << last.step << "\ttotal " << fmt4(last.total) << "\n";
    }
    out << "artifacts written to " << out_dir << "\n";
    return 0;
}

// ---- infer ----

// Maps model-frame pixel coordinates back onto the source image.
struct FrameMap {
    double sx = 1.0, sy = 1.0;
    double ox = 0.0, oy = 0.0;
    double w = 0.0, h = 0.0;
    double map_x(double x) const { return std::clamp((x - ox) / sx, 0.0, w); }
    double map_y(double y) const { return std::clamp((y - oy) / sy, 0.0, h); }
};

FrameMap frame_map(std::size_t src_w, std::size_t src_h, std::size_t model_w,
                   std::size_t model_h) {
    FrameMap f;
    f.w = static_cast<double>(src_w);
    f.h = static_cast<double>(src_h);
    if (src_w != model_w || src_h != model_h) {
        const LetterboxLayout l = letterbox_layout(src_w, src_h, model_w, model_h);
        f.sx = l.scale_x;
        f.sy = l.scale_y;
        f.ox = static_cast<double>(l.offset_x);
        f.oy = static_cast<double>(l.offset_y);
    }
    return f;
}

int cmd_infer(std::ostream& out, const std::string& ckpt_path,
              const std::vector<std::string>& images, const std::string& data_dir,
              const std::string& pred_out, double threshold, bool as_json) {
    const Detector model = Detector::from_checkpoint(load_checkpoint(ckpt_path));
    const std::size_t mw = model.config().image_width;
    const std::size_t mh = model.config().image_height;

    if (!data_dir.empty()) {
        if (pred_out.empty()) {
            throw UsageError("--data mode requires --pred-out <file>");
        }
        const auto descriptors =
            load_annotations((fs::path(data_dir) / "annotations.json").string());
        json preds = json::array();
        for (const SampleDescriptor& d : descriptors) {
            const ImageSample sample = load_sample(data_dir, d, mw, mh);
            const auto dets = infer_detections(model.forward(sample.image), threshold, mw, mh);
            const FrameMap f = frame_map(d.width, d.height, mw, mh);
            for (const InferDetection& det : dets) {
                const double x0 = f.map_x(det.x0), y0 = f.map_y(det.y0);
                const double x1 = f.map_x(det.x1), y1 = f.map_y(det.y1);
                preds.push_back({{"image_id", d.id},
                                 {"category_id", static_cast<int>(det.class_id)},
                                 {"bbox", {x0, y0, x1 - x0, y1 - y0}},
                                 {"score", det.score}});
            }
        }
        std::ofstream file(pred_out, std::ios::trunc);
        if (!file) {
            throw DataError("cannot write predictions file " + pred_out);
        }
        file << preds.dump(1) << "\n";
        out << "wrote " << preds.size() << " predictions for " << descriptors.size()
            << " images to " << pred_out << "\n";
        return 0;
    }

    if (images.empty()) {
        throw UsageError("nothing to run on: give PNG paths or --data <dir> --pred-out <file>");
    }
    json jout = json::array();
    for (const std::string& path : images) {
        const Image8 img = read_png_rgb8(path);
        const Tensor input = (img.width == mw && img.height == mh)
                                 ? image_to_tensor(img)
                                 : image_to_tensor(letterbox_image(img, mw, mh));
        const auto dets = infer_detections(model.forward(input), threshold, mw, mh);
        const FrameMap f = frame_map(img.width, img.height, mw, mh);
        if (as_json) {
            json jdets = json::array();
            for (const InferDetection& det : dets) {
                jdets.push_back({{"category_id", static_cast<int>(det.class_id)},
                                 {"category", class_name(det.class_id)},
                                 {"score", det.score},
                                 {"box", {f.map_x(det.x0), f.map_y(det.y0), f.map_x(det.x1),
                                          f.map_y(det.y1)}}});
            }
            jout.push_back({{"image", path}, {"detections", jdets}});
        } else {
            out << path << ": " << dets.size() << " detections\n";
            for (const InferDetection& det : dets) {
                out << "  " << class_name(det.class_id) << "\tscore " << fmt4(det.score)
                    << "\tbox [" << fmt4(f.map_x(det.x0)) << ", " << fmt4(f.map_y(det.y0)) << ", "
                    << fmt4(f.map_x(det.x1)) << ", " << fmt4(f.map_y(det.y1)) << "]\n";
            }
        }
    }
    if (as_json) {
        out << jout.dump(1) << "\n";
    }
    return 0;
}

// ---- eval ----

json report_to_json(const EvalReport& r) {
    json classes = json::array();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        classes.push_back({{"id", c},
                           {"name", class_name(c)},
                           {"ap", r.class_ap[c]},
                           {"ap50", r.class_ap50[c]},
                           {"has_ground_truth", r.class_has_ground_truth[c]}});
    }
    return {{"map", r.map},
            {"map50", r.map50},
            {"mar_10d", r.mar_10d},
            {"mar_100d", r.mar_100d},
            {"classes", classes}};
}

int cmd_eval(std::ostream& out, const std::string& data_dir, const std::string& pred_path,
             bool as_json, const std::string& report_path) {
    const auto descriptors = load_annotations((fs::path(data_dir) / "annotations.json").string());
    std::map<std::int64_t, const SampleDescriptor*> by_id;
    std::map<std::int64_t, std::vector<Detection>> detections;
    std::map<std::int64_t, std::vector<GroundTruthObject>> ground_truth;
    for (const SampleDescriptor& d : descriptors) {
        by_id[d.id] = &d;
        detections[d.id];
        ground_truth[d.id] = d.objects;
    }

    std::ifstream in(pred_path);
    if (!in) {
        throw DataError("cannot open predictions file " + pred_path);
    }
    json preds;
    try {
        preds = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("predictions file " + pred_path + " is malformed JSON: " + e.what());
    }
    if (!preds.is_array()) {
        throw DataError("predictions file " + pred_path + " must hold a JSON array");
    }
    for (const json& p : preds) {
        if (!p.is_object() || !p.contains("image_id") || !p.contains("category_id") ||
            !p.contains("bbox") || !p.contains("score")) {
            throw DataError("every prediction needs image_id, category_id, bbox, and score");
        }
        if (!p["image_id"].is_number_integer()) {
            throw DataError("prediction image_id must be an integer");
        }
        const std::int64_t image_id = p["image_id"].get<std::int64_t>();
        const auto it = by_id.find(image_id);
        if (it == by_id.end()) {
            throw DataError("prediction references unknown image id " + std::to_string(image_id));
        }
        if (!p["category_id"].is_number_integer()) {
            throw DataError("prediction category_id must be an integer");
        }
        const std::int64_t cat = p["category_id"].get<std::int64_t>();
        if (!valid_class_id(cat)) {
            throw DataError("prediction category_id " + std::to_string(cat) +
                            " is outside the label space (0.." +
                            std::to_string(kNumClasses - 1) + ")");
        }
        const json& bbox = p["bbox"];
        if (!bbox.is_array() || bbox.size() != 4 || !bbox[0].is_number() ||
            !bbox[1].is_number() || !bbox[2].is_number() || !bbox[3].is_number()) {
            throw DataError("prediction bbox must be [x, y, width, height] in pixels");
        }
        if (!p["score"].is_number()) {
            throw DataError("prediction score must be a number");
        }
        const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
        const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
        const double iw = static_cast<double>(it->second->width);
        const double ih = static_cast<double>(it->second->height);
        Detection det;
        det.box = {(x + w / 2.0) / iw, (y + h / 2.0) / ih, w / iw, h / ih};
        det.class_id = static_cast<std::size_t>(cat);
        det.confidence = p["score"].get<double>();
        detections[image_id].push_back(det);
    }

    const EvalReport rep = evaluate(detections, ground_truth);
    const json jrep = report_to_json(rep);
    if (!report_path.empty()) {
        std::ofstream file(report_path, std::ios::trunc);
        if (!file) {
            throw DataError("cannot write report file " + report_path);
        }
        file << jrep.dump(1) << "\n";
    }
    if (as_json) {
        out << jrep.dump(1) << "\n";
        return 0;
    }
    out << "mAP\t" << fmt4(rep.map) << "\n"
        << "mAP50\t" << fmt4(rep.map50) << "\n"
        << "mAR@10d\t" << fmt4(rep.mar_10d) << "\n"
        << "mAR@100d\t" << fmt4(rep.mar_100d) << "\n\n"
        << "class\tAP\tAP50\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << class_name(c) << "\t";
        if (rep.class_has_ground_truth[c]) {
            out << fmt4(rep.class_ap[c]) << "\t" << fmt4(rep.class_ap50[c]) << "\n";
        } else {
            out << "-\t- (no ground truth)\n";
        }
    }
    return 0;
}

// ---- match ----

CostMatrix read_cost_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open cost file " + path);
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream ss(line);
        std::vector<double> row;
        std::string token;
        while (ss >> token) {
            try {
                std::size_t used = 0;
                const double v = std::stod(token, &used);
                if (used != token.size()) {
                    throw std::invalid_argument(token);
                }
                row.push_back(v);
            } catch (const std::exception&) {
                throw DataError("cost file line " + std::to_string(line_no) +
                                ": '" + token + "' is not a number");
            }
        }
        if (!row.empty()) {
            rows.push_back(std::move(row));
        }
    }
    if (rows.empty()) {
        throw DataError("cost file " + path + " holds no numeric rows");
    }
    const std::size_t cols = rows.front().size();
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != cols) {
            throw DataError("cost file rows disagree on width: row 1 has " +
                            std::to_string(cols) + " entries, row " + std::to_string(r + 1) +
                            " has " + std::to_string(rows[r].size()));
        }
    }
    if (cols > rows.size()) {
        throw DataError("cost grid needs at least as many rows (predictions) as columns "
                        "(targets); got " +
                        std::to_string(rows.size()) + "x" + std::to_string(cols));
    }
    CostMatrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            m.at(r, c) = rows[r][c];
        }
    }
    return m;
}

int cmd_match(std::ostream& out, const std::string& cost_path, bool as_json) {
    const CostMatrix cost = read_cost_grid(cost_path);
    const Assignment a = hungarian(cost);
    if (as_json) {
        const json j = {{"rows", cost.rows()},
                        {"cols", cost.cols()},
                        {"assignment", a.prediction_for_target},
                        {"total_cost", a.total_cost}};
        out << j.dump(1) << "\n";
        return 0;
    }
    out << "rows " << cost.rows() << " cols " << cost.cols() << "\n";
    for (std::size_t j = 0; j < cost.cols(); ++j) {
        const std::size_t r = a.prediction_for_target[j];
        out << "target " << j << " -> prediction " << r << " (cost " << fmt_g(cost.at(r, j))
            << ")\n";
    }
    out << "total_cost " << fmt_g(a.total_cost) << "\n";
    return 0;
}

// ---- check-grad ----

struct BatteryResult {
    std::string name;
    GradCheckReport report;
};

BatteryResult battery_elementwise(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "elementwise"));
    Tensor a = Tensor::randn({3, 4}, rng, 0.8, true);
    Tensor b = Tensor::randn({3, 4}, rng, 0.5, true);
    const auto forward = [a, b]() {
        return sum(mul(sigmoid(a), add(exp(mul(b, 0.3)), 0.5)));
    };
    return {"elementwise", check_gradients(forward, {{"a", a}, {"b", b}})};
}

BatteryResult battery_attention(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "attention"));
    const std::size_t d = 8;
    AttentionParams p;
    std::vector<std::pair<std::string, Tensor>> params;
    const char* names[] = {"q", "k", "v", "out"};
    std::size_t i = 0;
    for (LinearLayer* l : {&p.query, &p.key, &p.value, &p.output}) {
        l->weight = Tensor::randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)), true);
        l->bias = Tensor::randn({d}, rng, 0.05, true);
        params.emplace_back(std::string(names[i]) + ".weight", l->weight);
        params.emplace_back(std::string(names[i]) + ".bias", l->bias);
        ++i;
    }
    Tensor x = Tensor::randn({5, d}, rng, 0.7, true);
    params.emplace_back("x", x);
    const auto forward = [x, p]() { return sum(multi_head_attention(x, x, x, 2, p)); };
    return {"attention", check_gradients(forward, params)};
}

BatteryResult battery_detector(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.num_heads = 2;
    cfg.num_queries = 3;
    cfg.ffn_hidden = 10;
    cfg.patch_size = 4;
    cfg.image_height = 8;
    cfg.image_width = 8;
    const Detector model(cfg, derive_seed(seed, "detector"));
    Rng rng(derive_seed(seed, "detector-image"));
    std::vector<double> pixels(3 * 8 * 8);
    for (double& v : pixels) {
        v = rng.uniform(0.0, 1.0);
    }
    const Tensor image({3, 8, 8}, std::move(pixels));
    std::vector<GroundTruthObject> targets(1);
    targets[0].box = {0.5, 0.5, 0.4, 0.3};
    targets[0].class_id = 1;

    std::vector<std::pair<std::string, Tensor>> params;
    for (const NamedParam& p : model.parameters()) {
        params.emplace_back(p.name, p.tensor);
    }
    const auto forward = [&model, image, targets]() {
        const PredictionSet p = model.forward(image);
        const std::vector<Tensor> logits = {p.class_logits};
        const std::vector<Tensor> boxes = {p.boxes};
        const std::vector<std::vector<GroundTruthObject>> batch = {targets};
        return batch_set_loss(logits, boxes, batch).total;
    };
    return {"detector_loss", check_gradients(forward, params, 1e-5, 1e-4, 4, seed)};
}

int cmd_check_grad(std::ostream& out, std::uint64_t seed) {
    const BatteryResult batteries[] = {battery_elementwise(seed), battery_attention(seed),
                                       battery_detector(seed)};
    double worst = 0.0;
    const BatteryResult* failing = nullptr;
    for (const BatteryResult& b : batteries) {
        out << b.name << "\tentries " << b.report.entries_checked << "\tmax_rel_error "
            << fmt_e(b.report.max_rel_error) << "\t" << (b.report.passed ? "pass" : "FAIL")
            << "\n";
        worst = std::max(worst, b.report.max_rel_error);
        if (!b.report.passed && failing == nullptr) {
            failing = &b;
        }
    }
    if (failing != nullptr) {
        throw NumericError("gradient check '" + failing->name + "' failed at parameter " +
                           failing->report.worst_parameter + "[" +
                           std::to_string(failing->report.worst_index) + "]: analytic " +
                           fmt_g(failing->report.analytic_at_worst) + " vs numeric " +
                           fmt_g(failing->report.numeric_at_worst));
    }
    out << "all gradient checks passed (worst " << fmt_e(worst) << " < tolerance 0.0001)\n";
    return 0;
}

// ---- report ----

int cmd_report(std::ostream& out, const std::string& dir) {
    const fs::path train_path = fs::path(dir) / "train_log.tsv";
    const fs::path eval_path = fs::path(dir) / "eval_log.tsv";
    std::ifstream train_in(train_path);
    if (!train_in) {
        throw DataError("cannot open " + train_path.string());
    }
    std::string line;
    if (!std::getline(train_in, line) || line.rfind("step\t", 0) != 0) {
        throw DataError(train_path.string() + " does not start with the step header");
    }
    struct Row {
        std::uint64_t step;
        double total;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(train_in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        Row r{};
        double cls = 0, l1 = 0, giou = 0;
        std::uint64_t matched = 0;
        if (!(ss >> r.step >> r.total >> cls >> l1 >> giou >> matched)) {
            throw DataError(train_path.string() + " line " + std::to_string(line_no) +
                            " is malformed");
        }
        rows.push_back(r);
    }
    out << "steps\t" << rows.size() << "\n";
    if (!rows.empty()) {
        double min_total = rows.front().total;
        for (const Row& r : rows) {
            min_total = std::min(min_total, r.total);
        }
        const double first = rows.front().total;
        const double last = rows.back().total;
        out << "first_total\t" << fmt4(first) << "\n"
            << "last_total\t" << fmt4(last) << "\n"
            << "min_total\t" << fmt4(min_total) << "\n";
        if (first > 0.0) {
            out << "loss_drop\t" << fmt4(100.0 * (first - last) / first) << "%\n";
        }
    }

    std::ifstream eval_in(eval_path);
    if (!eval_in) {
        out << "evals\t0 (no eval_log.tsv)\n";
        return 0;
    }
    if (!std::getline(eval_in, line) || line.rfind("epoch\t", 0) != 0) {
        throw DataError(eval_path.string() + " does not start with the epoch header");
    }
    struct EvalRow {
        std::uint64_t epoch;
        double map, map50, mar10, mar100;
    };
    std::vector<EvalRow> evals;
    line_no = 1;
    while (std::getline(eval_in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        EvalRow r{};
        if (!(ss >> r.epoch >> r.map >> r.map50 >> r.mar10 >> r.mar100)) {
            throw DataError(eval_path.string() + " line " + std::to_string(line_no) +
                            " is malformed");
        }
        evals.push_back(r);
    }
    out << "evals\t" << evals.size() << "\n";
    if (!evals.empty()) {
        const EvalRow* best = &evals.front();
        for (const EvalRow& r : evals) {
            if (r.map50 > best->map50) {
                best = &r;
            }
        }
        out << "best_map50\t" << fmt4(best->map50) << " (epoch " << best->epoch << ")\n";
        const EvalRow& last = evals.back();
        out << "last_eval\tepoch " << last.epoch << "\tmap " << fmt4(last.map) << "\tmap50 "
            << fmt4(last.map50) << "\tmar_10d " << fmt4(last.mar10) << "\tmar_100d "
            << fmt4(last.mar100) << "\n";
    }
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"desk-scale set-prediction object detector for synthetic dashcam scenes",
                 "tinydetr"};
    app.require_subcommand(0, 1);

    std::string gen_recipe, gen_out;
    std::uint64_t gen_count = 0;
    auto* gen = app.add_subcommand("generate-data", "render synthetic scenes into a dataset");
    gen->add_option("--recipe", gen_recipe, "scene recipe key=value file")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--count", gen_count, "number of images to render")->required();

    std::string tr_config, tr_data, tr_out, tr_val, tr_resume, tr_preset = "desk";
    auto* tr = app.add_subcommand("train", "train a detector on a dataset directory");
    tr->add_option("--config", tr_config, "model + schedule key=value file")->required();
    tr->add_option("--data", tr_data, "training dataset directory")->required();
    tr->add_option("--out", tr_out, "directory for logs and checkpoints")->required();
    tr->add_option("--val", tr_val, "validation dataset directory (evaluated each epoch)");
    tr->add_option("--resume", tr_resume, "checkpoint to continue from");
    tr->add_option("--preset", tr_preset, "baseline defaults the config overrides: desk|full_scale");

    std::string inf_ckpt, inf_data, inf_pred_out;
    std::vector<std::string> inf_images;
    double inf_threshold = 0.5;
    bool inf_json = false;
    auto* inf = app.add_subcommand("infer", "run detection on PNG images or a dataset");
    inf->add_option("--ckpt", inf_ckpt, "model checkpoint")->required();
    inf->add_option("--threshold", inf_threshold, "confidence floor in [0,1] (default 0.5)");
    inf->add_option("--data", inf_data, "dataset directory to sweep");
    inf->add_option("--pred-out", inf_pred_out, "predictions JSON to write in --data mode");
    inf->add_flag("--json", inf_json, "emit JSON instead of text");
    inf->add_option("images", inf_images, "PNG files to run on");

    std::string ev_data, ev_pred, ev_report;
    bool ev_json = false;
    auto* ev = app.add_subcommand("eval", "score a predictions file against a dataset");
    ev->add_option("--data", ev_data, "dataset directory with annotations.json")->required();
    ev->add_option("--pred", ev_pred, "predictions JSON file")->required();
    ev->add_option("--report", ev_report, "also write the JSON report to this file");
    ev->add_flag("--json", ev_json, "print the JSON report instead of the table");

    std::string ma_cost;
    bool ma_json = false;
    auto* ma = app.add_subcommand("match", "solve an assignment over a plain-text cost grid");
    ma->add_option("--cost", ma_cost, "whitespace-separated numeric grid, rows x cols")
        ->required();
    ma->add_flag("--json", ma_json, "emit JSON instead of text");

    std::uint64_t cg_seed = 0;
    auto* cg = app.add_subcommand("check-grad", "finite-difference check of the gradient engine");
    cg->add_option("--seed", cg_seed, "seed for the random probe points");

    std::string rp_dir;
    auto* rp = app.add_subcommand("report", "summarize the logs of a training run");
    rp->add_option("--dir", rp_dir, "training output directory")->required();

    try {
        std::vector<const char*> argv;
        argv.reserve(args.size() + 1);
        argv.push_back("tinydetr");
        for (const std::string& a : args) {
            argv.push_back(a.c_str());
        }
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    if (app.get_subcommands().empty()) {
        err << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(out, gen_recipe, gen_out, gen_count);
        }
        if (tr->parsed()) {
            return cmd_train(out, tr_config, tr_data, tr_out, tr_val, tr_resume, tr_preset);
        }
        if (inf->parsed()) {
            return cmd_infer(out, inf_ckpt, inf_images, inf_data, inf_pred_out, inf_threshold,
                             inf_json);
        }
        if (ev->parsed()) {
            return cmd_eval(out, ev_data, ev_pred, ev_json, ev_report);
        }
        if (ma->parsed()) {
            return cmd_match(out, ma_cost, ma_json);
        }
        if (cg->parsed()) {
            return cmd_check_grad(out, cg_seed);
        }
        if (rp->parsed()) {
            return cmd_report(out, rp_dir);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 1;
}

}  // namespace tinydetr
