#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include <json.hpp>

#include "passcam/checkpoint.hpp"
#include "passcam/scene.hpp"
#include "passcam/stats.hpp"

namespace httplib {
class Server;
}

namespace passcam {

inline constexpr int kApiVersion = 1;

/// Error with an explicit HTTP status (413 for oversized sweeps).
class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

struct SweepGrid {
    int cols = 24;  // along x, over [L - 30, L]
    int rows = 16;  // along y, over [W/2 - 30, W/2 + 30]
};

inline constexpr int kMaxSweepSide = 64;

/// Ball arrival point of sweep cell (col, row): the cell centre.
Vec2 sweep_cell_center(const SweepGrid& grid, int col, int row, PitchDims pitch);

/// Deterministic representative stats for a role archetype
/// ("defender" | "midfielder" | "forward").
PasserStats archetype_stats(const std::string& archetype);

// Request parsing shared by all POST endpoints: "scene" plus either "stats"
// or "archetype"; optional "raster" must equal the checkpoint's.
struct PassRequest {
    PitchScene scene;
    PasserStats stats;
};
PassRequest parse_pass_request(const Checkpoint& ckpt, const nlohmann::json& request);

// Pure handlers. Throw InvalidInput (400), ConfigMismatch (409), HttpError.
nlohmann::json handle_classify(const Checkpoint& ckpt, const nlohmann::json& request);
nlohmann::json handle_explain(const Checkpoint& ckpt, const nlohmann::json& request);
nlohmann::json handle_sweep(const Checkpoint& ckpt, const nlohmann::json& request);
nlohmann::json handle_model_info(const Checkpoint& ckpt);

/// Classification of one scene under a checkpoint (shared with the CLI).
nlohmann::json classify_json(const Checkpoint& ckpt, const PitchScene& scene, const PasserStats& stats);
nlohmann::json sweep_json(const Checkpoint& ckpt, const PitchScene& scene, const PasserStats& stats,
                          const SweepGrid& grid);

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
    std::map<std::string, std::string> headers;
};

/// Routes requests to the handlers over the currently loaded checkpoint. The
/// checkpoint is immutable once loaded; `load` swaps it between requests.
class InferenceService {
public:
    explicit InferenceService(std::string cors_origin = "http://localhost:5173");

    /// Throws ConfigMismatch when the raster and the model input size differ.
    void load(Checkpoint ckpt);
    void load_file(const std::filesystem::path& path);
    std::shared_ptr<const Checkpoint> current() const;

    ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body,
                           const std::string& if_none_match = "") const;

    const std::string& cors_origin() const { return cors_origin_; }

private:
    std::string cors_origin_;
    mutable std::mutex mu_;
    std::shared_ptr<const Checkpoint> ckpt_;
    std::string model_tag_;
};

/// httplib front end. `start` binds (port 0 = any free port) and serves on a
/// background thread; `run` blocks.
class HttpServer {
public:
    explicit HttpServer(InferenceService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    int start(const std::string& host, int port);
    void run(const std::string& host, int port);
    void stop();

private:
    InferenceService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace passcam
