#pragma once

// Live trials behind the steering API. Each trial runs on its own worker thread; the HTTP side
// only ever enqueues commands and reads an immutable state cell the worker swaps in.

#include "tailgen/harness/commands.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

namespace tailgen {

enum class TrialStatus { Idle, Running, Paused, Terminated };

inline const char* to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::Idle: return "idle";
        case TrialStatus::Running: return "running";
        case TrialStatus::Paused: return "paused";
        case TrialStatus::Terminated: return "terminated";
    }
    return "?";
}

/// A reply: HTTP status plus JSON body.
struct ApiReply {
    int status = 200;
    Json body;
};

inline ApiReply api_error(int status, std::string message) { return {status, Json{{"error", std::move(message)}}}; }

inline constexpr std::size_t kMaxScatterPoints = 2000;

/// Top-2 reduced coordinates, strided down to at most `limit` points.
inline Json scatter_2d(const Matrix& reduced, std::size_t limit = kMaxScatterPoints) {
    Json pts = Json::array();
    const auto n = static_cast<std::size_t>(reduced.cols());
    const std::size_t stride = n <= limit ? 1 : (n + limit - 1) / limit;
    for (std::size_t j = 0; j < n; j += stride) {
        const auto c = static_cast<Eigen::Index>(j);
        pts.push_back({reduced(0, c), reduced.rows() > 1 ? reduced(1, c) : 0.0});
    }
    return pts;
}

/// Mean and 2-sigma ellipse of a cluster in the top-2 reduced coordinates.
inline Json cluster_ellipse_2d(const NegativeCluster& c) {
    const Vector& mu = c.density.mean();
    const Eigen::Index d = std::min<Eigen::Index>(2, mu.size());
    Matrix cov2 = Matrix::Identity(2, 2) * 1e-12;
    cov2.topLeftCorner(d, d) = c.density.covariance().topLeftCorner(d, d);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov2);
    const Vector ev = es.eigenvalues().cwiseMax(0.0);
    const Vector major = es.eigenvectors().col(1);
    return Json{{"id", c.id},
                {"alpha", c.strength},
                {"mean", {mu[0], d > 1 ? mu[1] : 0.0}},
                {"ellipse",
                 {{"center", {mu[0], d > 1 ? mu[1] : 0.0}},
                  {"axes", {2.0 * std::sqrt(ev[1]), 2.0 * std::sqrt(ev[0])}},
                  {"angle", std::atan2(major[1], major[0])}}}};
}

/// Indices of snapshot columns whose top-2 coordinates fall inside the ellipse
/// (semi-axes a, b; `angle` radians from the x axis to a).
inline std::vector<Eigen::Index> select_in_ellipse(const Matrix& reduced, double cx, double cy, double a, double b,
                                                   double angle) {
    if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("ellipse axes must be positive");
    const double ca = std::cos(angle), sa = std::sin(angle);
    std::vector<Eigen::Index> out;
    for (Eigen::Index j = 0; j < reduced.cols(); ++j) {
        const double dx = reduced(0, j) - cx;
        const double dy = (reduced.rows() > 1 ? reduced(1, j) : 0.0) - cy;
        const double u = (ca * dx + sa * dy) / a;
        const double v = (-sa * dx + ca * dy) / b;
        if (u * u + v * v <= 1.0) out.push_back(j);
    }
    return out;
}

/// What the worker publishes; replaced wholesale, never mutated after publication.
struct LiveState {
    int iteration = 0;
    std::optional<IterationRow> last_row;
    std::optional<Validity> last_validity;
    std::shared_ptr<const Snapshot> snapshot;
    std::uint64_t version = 0;
};

struct TrialEvent {
    std::uint64_t seq = 0;
    Json body;
};

class LiveTrial : public TrialObserver {
public:
    LiveTrial(std::string id, ExperimentConfig cfg, std::shared_ptr<const TrialContext> ctx)
        : id_(std::move(id)), cfg_(std::move(cfg)), ctx_(std::move(ctx)), state_(std::make_shared<LiveState>()) {}

    ~LiveTrial() override { shutdown(); }

    const std::string& id() const { return id_; }

    TrialStatus status() const {
        std::lock_guard lock(mu_);
        return status_;
    }

    ApiReply start() {
        std::lock_guard lock(mu_);
        if (status_ != TrialStatus::Idle) return illegal("start");
        status_ = TrialStatus::Running;
        worker_ = std::thread([this] { run(); });
        return ok_status();
    }

    ApiReply pause() {
        std::lock_guard lock(mu_);
        if (status_ != TrialStatus::Running) return illegal("pause");
        queue_.pause();
        status_ = TrialStatus::Paused;
        return ok_status();
    }

    ApiReply resume() {
        std::lock_guard lock(mu_);
        if (status_ != TrialStatus::Paused) return illegal("resume");
        queue_.resume();
        status_ = TrialStatus::Running;
        return ok_status();
    }

    ApiReply stop() {
        std::lock_guard lock(mu_);
        if (status_ != TrialStatus::Running && status_ != TrialStatus::Paused) return illegal("stop");
        queue_.push(TrialCommand::stop());
        return ok_status();
    }

    /// Body: {"ellipse": {"center": [x, y], "axes": [a, b], "angle": rad}} or {"sample_ids": [...]},
    /// plus optional "alpha".
    ApiReply add_negative_cluster(const Json& body) {
        {
            std::lock_guard lock(mu_);
            if (status_ != TrialStatus::Running && status_ != TrialStatus::Paused)
                return api_error(409, std::string("cannot label a trial that is ") + to_string(status_));
        }
        const auto state = current();
        if (!state->snapshot) return api_error(409, "no snapshot available yet");
        const Matrix& reduced = state->snapshot->reduced;

        std::vector<Eigen::Index> ids;
        double alpha = cfg_.neg_strength;
        try {
            if (!body.is_object()) return api_error(400, "body must be a JSON object");
            alpha = body.value("alpha", alpha);
            if (!(alpha >= 0.0)) return api_error(400, "alpha must be nonnegative");
            if (body.contains("ellipse")) {
                const auto& e = body.at("ellipse");
                const auto c = e.at("center").get<std::vector<double>>();
                const auto ax = e.at("axes").get<std::vector<double>>();
                if (c.size() != 2 || ax.size() != 2) return api_error(400, "ellipse center and axes need two numbers");
                ids = select_in_ellipse(reduced, c[0], c[1], ax[0], ax[1], e.value("angle", 0.0));
            } else if (body.contains("sample_ids")) {
                for (const auto& v : body.at("sample_ids")) {
                    const auto i = v.get<Eigen::Index>();
                    if (i < 0 || i >= reduced.cols()) return api_error(400, "sample id out of range");
                    ids.push_back(i);
                }
            } else {
                return api_error(400, "need 'ellipse' or 'sample_ids'");
            }
        } catch (const nlohmann::json::exception& e) {
            return api_error(400, e.what());
        } catch (const ConfigError& e) {
            return api_error(400, e.what());
        }
        if (static_cast<Eigen::Index>(ids.size()) < kMinNegativeSamples)
            return api_error(422, "selection holds " + std::to_string(ids.size()) + " samples; at least " +
                                      std::to_string(kMinNegativeSamples) + " are needed");

        Matrix selected(reduced.rows(), static_cast<Eigen::Index>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) selected.col(static_cast<Eigen::Index>(i)) = reduced.col(ids[i]);

        std::lock_guard lock(mu_);
        if (status_ != TrialStatus::Running && status_ != TrialStatus::Paused)
            return api_error(409, "trial terminated while labeling");
        NegativeCluster cluster;
        try {
            cluster = fit_negative_cluster_reduced(selected, alpha, "neg-" + std::to_string(clusters_.size() + 1));
        } catch (const FitError& e) {
            return api_error(422, e.what());
        }
        clusters_.push_back(cluster);
        queue_.push(TrialCommand::add_cluster(std::move(cluster)));
        return {200, Json{{"cluster_id", clusters_.back().id}, {"selected", ids.size()}}};
    }

    Json state_document() const {
        const auto state = current();
        Json doc{{"trial_id", id_}, {"label", cfg_.trial_label}, {"iteration", state->iteration}};
        NegativeClusterSet clusters;
        std::optional<TrialRecord> record;
        {
            std::lock_guard lock(mu_);
            doc["status"] = to_string(status_);
            clusters = clusters_;
            record = record_;
            if (status_ == TrialStatus::Terminated)
                doc["termination"] = {{"reason", to_string(termination_)}, {"detail", termination_detail_}};
        }
        if (state->last_row) {
            const auto& r = *state->last_row;
            doc["losses"] = {{"creative", r.creative_loss}, {"anchor", r.anchor_loss}, {"neg", r.neg_loss}};
            doc["branch"] = to_string(r.branch);
            doc["grad_norm"] = r.grad_norm;
        } else {
            doc["losses"] = nullptr;
            doc["branch"] = nullptr;
        }
        doc["validity"] = state->last_validity ? Json(to_string(*state->last_validity)) : Json(nullptr);
        doc["baseline_scatter"] = scatter_2d(ctx_->reduced);
        if (state->snapshot) {
            doc["snapshot"] = {{"iteration", state->snapshot->iteration},
                               {"median_percentile", state->snapshot->stats.median_percentile},
                               {"points", scatter_2d(state->snapshot->reduced)}};
        } else {
            doc["snapshot"] = nullptr;
        }
        Json cl = Json::array();
        for (const auto& c : clusters) cl.push_back(cluster_ellipse_2d(c));
        doc["negative_clusters"] = cl;
        if (record) doc["record_path"] = record_path().generic_string();
        return doc;
    }

    /// Where a push-stream subscriber has read up to.
    struct EventCursor {
        std::uint64_t seq = 0;
        std::uint64_t version = 0;
    };

    /// A new subscriber starts at the latest state: no backlog of discrete events, one progress
    /// event for the current iteration if the trial is live, only the terminal event if it is not.
    EventCursor subscribe() const {
        std::lock_guard lock(mu_);
        EventCursor c;
        c.seq = next_seq_ - 1;
        c.version = state_->version;
        if (status_ != TrialStatus::Terminated && c.version > 0) --c.version;
        return c;
    }

    /// Discrete events newer than the cursor plus one coalesced progress event if the state moved,
    /// blocking up to `wait` for either. The second value is true once the trial has terminated
    /// (the returned events then end with a terminal event).
    std::pair<std::vector<Json>, bool> poll_events(EventCursor& cursor, std::chrono::milliseconds wait) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, wait, [&] {
            return next_seq_ - 1 > cursor.seq || state_->version > cursor.version ||
                   status_ == TrialStatus::Terminated || closing_;
        });
        std::vector<Json> out;
        for (const auto& e : events_)
            if (e.seq > cursor.seq) out.push_back(e.body);
        cursor.seq = next_seq_ - 1;
        if (state_->version > cursor.version && state_->last_row) {
            const auto& r = *state_->last_row;
            out.push_back(Json{{"type", "progress"},
                               {"iteration", r.iteration},
                               {"losses", {{"creative", r.creative_loss}, {"anchor", r.anchor_loss}, {"neg", r.neg_loss}}},
                               {"branch", to_string(r.branch)},
                               {"validity", to_string(r.validity)}});
        }
        cursor.version = state_->version;
        const bool done = status_ == TrialStatus::Terminated || (closing_ && status_ == TrialStatus::Idle);
        if (done) out.push_back(Json{{"type", "terminal"}, {"reason", to_string(termination_)}, {"detail", termination_detail_}});
        return {std::move(out), done};
    }

    /// Stops the worker (if any) and waits for it.
    void shutdown() {
        {
            std::lock_guard lock(mu_);
            closing_ = true;
            if (status_ == TrialStatus::Running || status_ == TrialStatus::Paused) queue_.push(TrialCommand::stop());
        }
        cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    std::optional<TrialRecord> record() const {
        std::lock_guard lock(mu_);
        return record_;
    }

    fs::path record_path() const { return cfg_.output_dir / (cfg_.trial_label + "-" + id_ + ".json"); }

    // TrialObserver (worker thread)
    void on_iteration(const IterationRow& row, const Vector&) override {
        auto next = std::make_shared<LiveState>(*current());
        next->iteration = row.iteration;
        next->last_row = row;
        if (row.validity != Validity::Skipped) next->last_validity = row.validity;
        publish(std::move(next), row.validity != Validity::Skipped
                                     ? std::optional<Json>(Json{{"type", "validity"},
                                                                {"iteration", row.iteration},
                                                                {"result", to_string(row.validity)}})
                                     : std::nullopt);
    }

    void on_snapshot(const Snapshot& s) override {
        auto next = std::make_shared<LiveState>(*current());
        next->snapshot = std::make_shared<const Snapshot>(s);
        publish(std::move(next), Json{{"type", "snapshot"},
                                      {"iteration", s.iteration},
                                      {"median_percentile", s.stats.median_percentile}});
    }

    void on_command(const RecordedCommand& c) override {
        Json ev{{"type", "command"}, {"iteration", c.iteration}};
        ev["command"] = c.command.type == TrialCommand::Type::Stop ? "stop" : "add_negative_cluster";
        if (c.command.type == TrialCommand::Type::AddNegativeCluster) ev["cluster_id"] = c.command.cluster.id;
        publish(nullptr, std::move(ev));
    }

private:
    ApiReply illegal(const char* what) const {
        return api_error(409, std::string("cannot ") + what + " a trial that is " + to_string(status_));
    }

    ApiReply ok_status() const { return {200, Json{{"trial_id", id_}, {"status", to_string(status_)}}}; }

    std::shared_ptr<const LiveState> current() const {
        std::lock_guard lock(mu_);
        return state_;
    }

    void publish(std::shared_ptr<LiveState> next, std::optional<Json> event) {
        {
            std::lock_guard lock(mu_);
            if (next) {
                next->version = state_->version + 1;
                state_ = std::move(next);
            }
            if (event) events_.push_back({next_seq_++, std::move(*event)});
            if (events_.size() > 256) events_.erase(events_.begin(), events_.begin() + 128);
        }
        cv_.notify_all();
    }

    void run() {
        TrialRecord rec;
        try {
            rec = run_trial(ctx_->setup(cfg_.trial_label + "-" + id_), cfg_.trial, {},
                            stage_seeds(cfg_.master_seed).trial, &queue_, this);
            rec.references = {{"prior_checkpoint", cfg_.prior_checkpoint.generic_string()},
                              {"baseline", cfg_.baseline.generic_string()},
                              {"service_trial_id", id_}};
            write_trial_outputs(rec, record_path(), cfg_.output_dir / (cfg_.trial_label + "-" + id_ + ".trajectory.csv"));
        } catch (const std::exception& e) {
            rec.termination = Termination::Diverged;
            rec.termination_detail = e.what();
        }
        {
            std::lock_guard lock(mu_);
            termination_ = rec.termination;
            termination_detail_ = rec.termination_detail;
            record_ = std::move(rec);
            status_ = TrialStatus::Terminated;
        }
        cv_.notify_all();
    }

    const std::string id_;
    const ExperimentConfig cfg_;
    const std::shared_ptr<const TrialContext> ctx_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    TrialStatus status_ = TrialStatus::Idle;
    CommandQueue queue_;
    std::thread worker_;
    std::shared_ptr<const LiveState> state_;
    std::vector<TrialEvent> events_;
    std::uint64_t next_seq_ = 1;
    NegativeClusterSet clusters_;
    std::optional<TrialRecord> record_;
    Termination termination_ = Termination::Completed;
    std::string termination_detail_;
    bool closing_ = false;
};

class TrialRegistry {
public:
    ~TrialRegistry() { shutdown(); }

    /// POST /api/trials
    ApiReply create(const std::string& body) {
        Json j;
        try {
            j = Json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            return api_error(400, std::string("malformed JSON: ") + e.what());
        }
        ExperimentConfig cfg;
        try {
            cfg = experiment_config_from_json(j);
        } catch (const ConfigError& e) {
            return api_error(400, e.what());
        } catch (const nlohmann::json::exception& e) {
            return api_error(400, e.what());
        }
        if (!fs::exists(cfg.baseline)) return api_error(409, "baseline artifact '" + cfg.baseline.string() + "' is missing");
        if (!fs::exists(cfg.prior_checkpoint))
            return api_error(409, "prior checkpoint '" + cfg.prior_checkpoint.string() + "' is missing");
        std::shared_ptr<const TrialContext> ctx;
        try {
            ctx = TrialContext::load(cfg);
        } catch (const std::exception& e) {
            return api_error(409, std::string("baseline unusable: ") + e.what());
        }
        std::lock_guard lock(mu_);
        const std::string id = "t" + std::to_string(++counter_);
        trials_.emplace(id, std::make_shared<LiveTrial>(id, std::move(cfg), std::move(ctx)));
        return {201, Json{{"trial_id", id}, {"status", "idle"}}};
    }

    std::shared_ptr<LiveTrial> find(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = trials_.find(id);
        return it == trials_.end() ? nullptr : it->second;
    }

    Json list() const {
        std::lock_guard lock(mu_);
        Json arr = Json::array();
        for (const auto& [id, t] : trials_) arr.push_back({{"trial_id", id}, {"status", to_string(t->status())}});
        return arr;
    }

    void shutdown() {
        std::map<std::string, std::shared_ptr<LiveTrial>> trials;
        {
            std::lock_guard lock(mu_);
            trials = trials_;
        }
        for (auto& [id, t] : trials) t->shutdown();
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<LiveTrial>> trials_;
    std::uint64_t counter_ = 0;
};

}  // namespace tailgen
