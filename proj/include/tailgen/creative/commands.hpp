#pragma once

// External control of a running trial. Commands are consumed once per iteration boundary and the
// ones that change the trial (stop, new negative cluster) are logged with their iteration index,
// so a run can be replayed exactly from (config, seed, command log).

#include "tailgen/creative/negative.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <vector>

namespace tailgen {

struct TrialCommand {
    enum class Type { Stop, AddNegativeCluster };
    Type type = Type::Stop;
    NegativeCluster cluster;  ///< AddNegativeCluster only

    static TrialCommand stop() { return {}; }
    static TrialCommand add_cluster(NegativeCluster c) { return {Type::AddNegativeCluster, std::move(c)}; }
};

struct RecordedCommand {
    int iteration = 0;
    TrialCommand command;
};

class CommandSource {
public:
    virtual ~CommandSource() = default;
    /// Commands to apply before iteration `iteration` runs. May block (e.g. while paused).
    virtual std::vector<TrialCommand> poll(int iteration) = 0;
};

/// Replays a recorded command log.
class ReplayCommands final : public CommandSource {
public:
    explicit ReplayCommands(std::vector<RecordedCommand> log) : log_(std::move(log)) {}

    std::vector<TrialCommand> poll(int iteration) override {
        std::vector<TrialCommand> out;
        for (const auto& r : log_)
            if (r.iteration == iteration) out.push_back(r.command);
        return out;
    }

private:
    std::vector<RecordedCommand> log_;
};

/// Thread-safe live queue. While paused, poll() blocks until resumed or a stop arrives.
class CommandQueue final : public CommandSource {
public:
    void push(TrialCommand cmd) {
        {
            std::lock_guard lock(mu_);
            pending_.push_back(std::move(cmd));
        }
        cv_.notify_all();
    }

    void pause() {
        std::lock_guard lock(mu_);
        paused_ = true;
    }

    void resume() {
        {
            std::lock_guard lock(mu_);
            paused_ = false;
        }
        cv_.notify_all();
    }

    bool paused() const {
        std::lock_guard lock(mu_);
        return paused_;
    }

    std::vector<TrialCommand> poll(int) override {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !paused_ || has_stop(); });
        std::vector<TrialCommand> out(pending_.begin(), pending_.end());
        pending_.clear();
        return out;
    }

private:
    bool has_stop() const {
        for (const auto& c : pending_)
            if (c.type == TrialCommand::Type::Stop) return true;
        return false;
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TrialCommand> pending_;
    bool paused_ = false;
};

inline Json to_json(const RecordedCommand& r) {
    Json j{{"iteration", r.iteration}};
    if (r.command.type == TrialCommand::Type::Stop) {
        j["type"] = "stop";
    } else {
        j["type"] = "add_negative_cluster";
        j["cluster"] = to_json(r.command.cluster);
    }
    return j;
}

inline RecordedCommand recorded_command_from_json(const Json& j) {
    RecordedCommand r;
    r.iteration = j.at("iteration").get<int>();
    const auto type = j.at("type").get<std::string>();
    if (type == "stop") {
        r.command = TrialCommand::stop();
    } else if (type == "add_negative_cluster") {
        r.command = TrialCommand::add_cluster(negative_cluster_from_json(j.at("cluster")));
    } else {
        throw ConfigError("unknown command type '" + type + "'");
    }
    return r;
}

}  // namespace tailgen
