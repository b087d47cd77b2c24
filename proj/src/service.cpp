#include "passcam/service.hpp"

#include <httplib.h>

#include <algorithm>

#include "passcam/error.hpp"
#include "passcam/explain.hpp"
#include "passcam/hash.hpp"
#include "passcam/parallel.hpp"
#include "passcam/synth.hpp"

namespace passcam {

using nlohmann::json;

namespace {

constexpr double kZoneRadius = 30.0;

std::vector<double> feature_input(const Checkpoint& ckpt, const PasserStats& stats) {
    const FeatureVector fv = ckpt.standardizer.apply(build_feature_vector(stats));
    return {fv.v.begin(), fv.v.end()};
}

SweepGrid parse_grid(const json& request) {
    SweepGrid grid;
    if (!request.contains("grid")) return grid;
    const json& g = request.at("grid");
    if (!g.is_object()) throw InvalidInput("grid", "expected an object with cols and rows");
    for (const char* key : {"cols", "rows"}) {
        if (!g.contains(key)) continue;
        if (!g.at(key).is_number_integer()) throw InvalidInput(std::string("grid.") + key, "expected an integer");
        const long v = g.at(key).get<long>();
        if (v < 1) throw InvalidInput(std::string("grid.") + key, "must be at least 1");
        if (v > kMaxSweepSide)
            throw HttpError(413, std::string("grid.") + key + " exceeds " + std::to_string(kMaxSweepSide));
        (std::string(key) == "cols" ? grid.cols : grid.rows) = static_cast<int>(v);
    }
    return grid;
}

json error_body(const std::string& message, const std::string& field = "") {
    json j = {{"v", kApiVersion}, {"error", message}};
    if (!field.empty()) j["field"] = field;
    return j;
}

std::string model_tag(const Checkpoint& ckpt) {
    const auto vals = ckpt.params.values();
    std::string bytes(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
    bytes += ckpt.standardizer.fitted_on();
    bytes += raster_config_to_json(ckpt.raster).dump();
    return sha256_hex(bytes);
}

}  // namespace

Vec2 sweep_cell_center(const SweepGrid& grid, int col, int row, PitchDims pitch) {
    const Vec2 goal = attacked_goal_center(pitch);
    const double x0 = goal.x - kZoneRadius, y0 = goal.y - kZoneRadius;
    return {x0 + (col + 0.5) * kZoneRadius / grid.cols, y0 + (row + 0.5) * 2.0 * kZoneRadius / grid.rows};
}

PasserStats archetype_stats(const std::string& archetype) { return archetype_passer(role_from_name(archetype)).stats; }

PassRequest parse_pass_request(const Checkpoint& ckpt, const json& request) {
    if (!request.is_object()) throw InvalidInput("body", "expected a JSON object");
    if (request.contains("v") && request.at("v") != kApiVersion)
        throw InvalidInput("v", "unsupported schema version (expected " + std::to_string(kApiVersion) + ")");
    if (!request.contains("scene")) throw InvalidInput("scene", "required");
    PassRequest out;
    out.scene = scene_from_json(request.at("scene"));
    validate_scene(out.scene);
    if (request.contains("stats")) {
        out.stats = stats_from_json(request.at("stats"));
    } else if (request.contains("archetype")) {
        if (!request.at("archetype").is_string()) throw InvalidInput("archetype", "expected a string");
        out.stats = archetype_stats(request.at("archetype").get<std::string>());
    } else {
        throw InvalidInput("stats", "either stats or archetype is required");
    }
    validate_stats(out.stats);
    if (request.contains("raster")) {
        RasterConfig r;
        try {
            r = raster_config_from_json(request.at("raster"));
        } catch (const std::exception& e) {
            throw InvalidInput("raster", e.what());
        }
        if (!(r == ckpt.raster)) throw ConfigMismatch("request raster settings differ from the loaded model's");
    }
    return out;
}

json classify_json(const Checkpoint& ckpt, const PitchScene& scene, const PasserStats& stats) {
    const auto image = rasterize_scene(scene, ckpt.raster).float_view();
    const Prediction p = predict(ckpt.params, image, feature_input(ckpt, stats));
    return {{"v", kApiVersion},
            {"label", outcome_name(p.label)},
            {"probabilities", {{"success", p.probabilities[0]}, {"failure", p.probabilities[1]}}}};
}

json handle_classify(const Checkpoint& ckpt, const json& request) {
    const PassRequest req = parse_pass_request(ckpt, request);
    return classify_json(ckpt, req.scene, req.stats);
}

json handle_explain(const Checkpoint& ckpt, const json& request) {
    const PassRequest req = parse_pass_request(ckpt, request);
    std::optional<int> target;
    if (request.contains("class") && !request.at("class").is_null()) {
        if (!request.at("class").is_string()) throw InvalidInput("class", "expected \"success\" or \"failure\"");
        target = static_cast<int>(outcome_from_name(request.at("class").get<std::string>()));
    }
    const auto image = rasterize_scene(req.scene, ckpt.raster).float_view();
    const ExplanationReport r = explain_pass(ckpt.params, image, feature_input(ckpt, req.stats), target);
    json out = report_to_json(r);
    out["feature_bars"] = feature_bars_json(r)["bars"];
    return out;
}

json sweep_json(const Checkpoint& ckpt, const PitchScene& scene, const PasserStats& stats, const SweepGrid& grid) {
    struct Cell {
        int col, row;
        Vec2 at;
        double p = 0.0;
    };
    std::vector<Cell> cells;
    for (int row = 0; row < grid.rows; ++row)
        for (int col = 0; col < grid.cols; ++col) {
            const Vec2 c = sweep_cell_center(grid, col, row, scene.pitch);
            if (in_target_zone(c, scene.pitch)) cells.push_back({col, row, c});
        }
    const auto features = feature_input(ckpt, stats);
    // Full re-render per cell: reuses the verified render path.
    parallel_for(cells.size(), [&](std::size_t i) {
        PitchScene moved = scene;
        moved.ball_to = cells[i].at;
        cells[i].p = predict(ckpt.params, rasterize_scene(moved, ckpt.raster).float_view(), features).probabilities[0];
    });

    const Vec2 goal = attacked_goal_center(scene.pitch);
    json out = {{"v", kApiVersion},
                {"grid",
                 {{"cols", grid.cols},
                  {"rows", grid.rows},
                  {"x_min", goal.x - kZoneRadius},
                  {"x_max", goal.x},
                  {"y_min", goal.y - kZoneRadius},
                  {"y_max", goal.y + kZoneRadius}}}};
    json arr = json::array();
    std::size_t best = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        arr.push_back({{"col", cells[i].col}, {"row", cells[i].row}, {"x", cells[i].at.x}, {"y", cells[i].at.y},
                       {"p_success", cells[i].p}});
        if (cells[i].p > cells[best].p) best = i;
    }
    out["cells"] = arr;
    out["argmax"] = cells.empty() ? json(nullptr) : arr[best];
    return out;
}

json handle_sweep(const Checkpoint& ckpt, const json& request) {
    const SweepGrid grid = parse_grid(request);
    const PassRequest req = parse_pass_request(ckpt, request);
    return sweep_json(ckpt, req.scene, req.stats, grid);
}

json handle_model_info(const Checkpoint& ckpt) {
    const json& meta = ckpt.metadata;
    std::string preset = ckpt.params.config().input_px == 224 ? "paper" : "desk";
    if (meta.contains("run_config") && meta["run_config"].contains("preset"))
        preset = meta["run_config"]["preset"].get<std::string>();
    json archetypes = json::object();
    for (Role r : {Role::defender, Role::midfielder, Role::forward})
        archetypes[role_name(r)] = stats_to_json(archetype_passer(r).stats);
    const PitchDims pitch;
    return {{"v", kApiVersion},
            {"preset", preset},
            {"run_config_hash", meta.contains("run_config_hash") ? meta["run_config_hash"] : json(nullptr)},
            {"model_config", model_config_to_json(ckpt.params.config())},
            {"raster", raster_config_to_json(ckpt.raster)},
            {"pitch", {{"length_m", pitch.length_m}, {"width_m", pitch.width_m}}},
            {"feature_names", feature_names()},
            {"archetypes", archetypes},
            {"sweep", {{"default_cols", SweepGrid{}.cols}, {"default_rows", SweepGrid{}.rows}, {"max_side", kMaxSweepSide}}},
            {"metadata", meta}};
}

// ------------------------------------------------------------------ routing

InferenceService::InferenceService(std::string cors_origin) : cors_origin_(std::move(cors_origin)) {}

void InferenceService::load(Checkpoint ckpt) {
    if (ckpt.raster.width_px != ckpt.params.config().input_px || ckpt.raster.height_px != ckpt.params.config().input_px)
        throw ConfigMismatch("checkpoint raster size does not match the model input size");
    auto next = std::make_shared<const Checkpoint>(std::move(ckpt));
    std::string tag = model_tag(*next);
    std::lock_guard lock(mu_);
    ckpt_ = std::move(next);
    model_tag_ = std::move(tag);
}

void InferenceService::load_file(const std::filesystem::path& path) { load(load_checkpoint(path)); }

std::shared_ptr<const Checkpoint> InferenceService::current() const {
    std::lock_guard lock(mu_);
    return ckpt_;
}

ServiceResponse InferenceService::handle(const std::string& method, const std::string& path, const std::string& body,
                                         const std::string& if_none_match) const {
    ServiceResponse res;
    res.headers = {{"Access-Control-Allow-Origin", cors_origin_},
                   {"Vary", "Origin"},
                   {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                   {"Access-Control-Allow-Headers", "Content-Type, If-None-Match"},
                   {"Access-Control-Expose-Headers", "ETag"}};
    if (method == "OPTIONS") {
        res.status = 204;
        return res;
    }

    std::shared_ptr<const Checkpoint> ckpt;
    std::string tag;
    {
        std::lock_guard lock(mu_);
        ckpt = ckpt_;
        tag = model_tag_;
    }

    const bool is_post = path == "/classify" || path == "/explain" || path == "/sweep";
    if (path == "/healthz" || path == "/model/info") {
        if (method != "GET") {
            res.status = 405;
            res.body = error_body("use GET");
            return res;
        }
    } else if (is_post) {
        if (method != "POST") {
            res.status = 405;
            res.body = error_body("use POST");
            return res;
        }
    } else {
        res.status = 404;
        res.body = error_body("no such endpoint: " + path);
        return res;
    }

    if (path == "/healthz") {
        res.body = {{"v", kApiVersion}, {"status", "ok"}, {"model_loaded", ckpt != nullptr}};
        return res;
    }
    if (!ckpt) {
        res.status = 503;
        res.body = error_body("no model loaded");
        return res;
    }
    if (path == "/model/info") {
        res.body = handle_model_info(*ckpt);
        return res;
    }

    json request;
    try {
        request = json::parse(body);
    } catch (const json::exception& e) {
        res.status = 400;
        res.body = error_body(std::string("malformed JSON: ") + e.what(), "body");
        return res;
    }
    // Same model + endpoint + canonical request => same answer.
    const std::string etag = "\"" + sha256_hex(tag + path + request.dump()) + "\"";
    if (!if_none_match.empty() && if_none_match == etag) {
        res.status = 304;
        res.headers["ETag"] = etag;
        return res;
    }
    try {
        if (path == "/classify") res.body = handle_classify(*ckpt, request);
        else if (path == "/explain") res.body = handle_explain(*ckpt, request);
        else res.body = handle_sweep(*ckpt, request);
        res.headers["ETag"] = etag;
    } catch (const InvalidInput& e) {
        res.status = 400;
        res.body = error_body(e.what(), e.field());
    } catch (const ConfigMismatch& e) {
        res.status = 409;
        res.body = error_body(e.what());
    } catch (const HttpError& e) {
        res.status = e.status();
        res.body = error_body(e.what());
    } catch (const json::exception& e) {
        res.status = 400;
        res.body = error_body(e.what(), "body");
    } catch (const std::exception& e) {
        res.status = 500;
        res.body = error_body(e.what());
    }
    return res;
}

// ------------------------------------------------------------------ HTTP

HttpServer::HttpServer(InferenceService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        const ServiceResponse out = service_.handle(req.method, req.path, req.body, req.get_header_value("If-None-Match"));
        res.status = out.status;
        for (const auto& [k, v] : out.headers) res.set_header(k, v);
        if (!out.body.is_null()) res.set_content(out.body.dump(), "application/json");
    };
    server_->Get(R"(/.*)", route);
    server_->Post(R"(/.*)", route);
    server_->Options(R"(/.*)", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    if (port == 0) {
        port = server_->bind_to_any_port(host);
        if (port < 0) throw std::runtime_error("cannot bind " + host);
    } else if (!server_->bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void HttpServer::run(const std::string& host, int port) {
    if (!server_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace passcam
