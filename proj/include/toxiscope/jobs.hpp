#pragma once

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace toxiscope {

enum class JobKind { Classification, Summarization, PplGain, Persona };
enum class JobState { Pending, Running, Done, Failed, Cancelled };

std::string_view to_string(JobKind kind);
JobKind parse_job_kind(std::string_view name);
std::string_view to_string(JobState state);
bool is_terminal(JobState state);

struct JobSnapshot {
    std::string job_id;
    JobKind kind = JobKind::Classification;
    JobState state = JobState::Pending;
    double progress = 0.0;
    std::size_t total = 0;
    std::size_t completed = 0;
    std::string submitted_at;
    std::optional<std::string> error;
    std::optional<std::string> error_code;
};

nlohmann::json to_json(const JobSnapshot& snapshot);

/// Handed to a running job for progress reports and cancellation checks.
class JobContext {
public:
    virtual ~JobContext() = default;
    virtual bool cancelled() const = 0;
    /// Progress never decreases; smaller values are ignored.
    virtual void report(std::size_t completed, std::size_t total) = 0;
    virtual void report_fraction(double progress, std::size_t completed, std::size_t total) = 0;
};

using JobFn = std::function<nlohmann::json(JobContext&)>;

class JobManager {
public:
    /// workers == 0 uses the hardware concurrency.
    explicit JobManager(std::size_t workers = 0, std::size_t queue_capacity = 64,
                        bool cache_by_content = true);
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// With a content hash, resubmitting identical content returns the
    /// existing job unless it failed or was cancelled. QueueFull when the
    /// pending queue is at capacity.
    JobSnapshot submit(JobKind kind, JobFn fn, const std::string& content_hash = {});
    JobSnapshot poll(const std::string& job_id) const;
    /// Result document of a finished job; nullopt until done.
    std::optional<nlohmann::json> result(const std::string& job_id) const;
    JobSnapshot cancel(const std::string& job_id);
    /// Blocks until the job is terminal or the timeout passes.
    JobSnapshot wait(const std::string& job_id,
                     std::chrono::milliseconds timeout = std::chrono::minutes(10)) const;
    std::vector<JobSnapshot> list() const;

    std::size_t workers() const { return threads_.size(); }

private:
    struct Job;
    class Context;

    std::shared_ptr<Job> find(const std::string& job_id) const;
    void worker_loop();

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::condition_variable work_ready_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::map<std::string, std::string> by_hash_;
    std::vector<std::thread> threads_;
    std::size_t capacity_;
    bool cache_by_content_;
    bool stopping_ = false;
    std::uint64_t sequence_ = 0;
};

}  // namespace toxiscope
