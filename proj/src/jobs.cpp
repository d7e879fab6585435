#include "toxiscope/jobs.hpp"

#include "toxiscope/error.hpp"
#include "toxiscope/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

namespace toxiscope {

using nlohmann::json;

std::string_view to_string(JobKind kind) {
    switch (kind) {
        case JobKind::Classification: return "classification";
        case JobKind::Summarization: return "summarization";
        case JobKind::PplGain: return "ppl_gain";
        case JobKind::Persona: return "persona";
    }
    return "unknown";
}

JobKind parse_job_kind(std::string_view name) {
    auto n = to_lower(trim(name));
    std::replace(n.begin(), n.end(), '-', '_');
    if (n == "classification" || n == "classify") return JobKind::Classification;
    if (n == "summarization" || n == "summarize") return JobKind::Summarization;
    if (n == "ppl_gain") return JobKind::PplGain;
    if (n == "persona") return JobKind::Persona;
    fail(ErrorCode::ValidationError, "unknown job kind '" + std::string(name) + "'");
}

std::string_view to_string(JobState state) {
    switch (state) {
        case JobState::Pending: return "pending";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Failed: return "failed";
        case JobState::Cancelled: return "cancelled";
    }
    return "unknown";
}

bool is_terminal(JobState state) {
    return state == JobState::Done || state == JobState::Failed || state == JobState::Cancelled;
}

json to_json(const JobSnapshot& s) {
    json j = {{"job_id", s.job_id},
              {"kind", std::string(to_string(s.kind))},
              {"state", std::string(to_string(s.state))},
              {"progress", s.progress},
              {"total", s.total},
              {"completed", s.completed},
              {"submitted_at", s.submitted_at},
              {"error", nullptr}};
    if (s.error) j["error"] = {{"code", s.error_code.value_or("Internal")}, {"message", *s.error}};
    return j;
}

struct JobManager::Job {
    JobSnapshot snapshot;
    JobFn fn;
    std::string content_hash;
    std::atomic<bool> cancel_requested{false};
    std::optional<json> result;
};

class JobManager::Context : public JobContext {
public:
    Context(JobManager& owner, Job& job) : owner_(owner), job_(job) {}

    bool cancelled() const override { return job_.cancel_requested.load(); }

    void report(std::size_t completed, std::size_t total) override {
        double p = total ? static_cast<double>(completed) / static_cast<double>(total) : 0.0;
        report_fraction(p, completed, total);
    }

    void report_fraction(double progress, std::size_t completed, std::size_t total) override {
        std::lock_guard lock(owner_.mutex_);
        auto& s = job_.snapshot;
        if (s.state != JobState::Running) return;
        progress = std::clamp(progress, 0.0, 1.0);
        s.progress = std::max(s.progress, progress);
        s.total = total;
        s.completed = std::max(s.completed, completed);
        owner_.changed_.notify_all();
    }

private:
    JobManager& owner_;
    Job& job_;
};

JobManager::JobManager(std::size_t workers, std::size_t queue_capacity, bool cache_by_content)
    : capacity_(queue_capacity), cache_by_content_(cache_by_content) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { worker_loop(); });
}

JobManager::~JobManager() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        for (auto& [_, job] : jobs_) {
            job->cancel_requested = true;
            if (job->snapshot.state == JobState::Pending) job->snapshot.state = JobState::Cancelled;
        }
        queue_.clear();
    }
    work_ready_.notify_all();
    for (auto& t : threads_) t.join();
}

JobSnapshot JobManager::submit(JobKind kind, JobFn fn, const std::string& content_hash) {
    std::lock_guard lock(mutex_);
    if (stopping_) fail(ErrorCode::PreconditionViolation, "job manager is shutting down");
    if (cache_by_content_ && !content_hash.empty()) {
        auto it = by_hash_.find(content_hash);
        if (it != by_hash_.end()) {
            const auto& existing = jobs_.at(it->second)->snapshot;
            if (existing.state != JobState::Failed && existing.state != JobState::Cancelled)
                return existing;
        }
    }
    if (queue_.size() >= capacity_)
        fail(ErrorCode::QueueFull, "job queue is full (" + std::to_string(capacity_) + ")");

    auto job = std::make_shared<Job>();
    job->snapshot.job_id =
        "job-" + sha256_hex(std::to_string(++sequence_) + now_iso8601()).substr(0, 12);
    job->snapshot.kind = kind;
    job->snapshot.submitted_at = now_iso8601();
    job->fn = std::move(fn);
    job->content_hash = content_hash;
    jobs_[job->snapshot.job_id] = job;
    if (!content_hash.empty()) by_hash_[content_hash] = job->snapshot.job_id;
    queue_.push_back(job);
    work_ready_.notify_one();
    return job->snapshot;
}

std::shared_ptr<JobManager::Job> JobManager::find(const std::string& job_id) const {
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) fail(ErrorCode::NotFound, "unknown job '" + job_id + "'");
    return it->second;
}

JobSnapshot JobManager::poll(const std::string& job_id) const {
    std::lock_guard lock(mutex_);
    return find(job_id)->snapshot;
}

std::optional<json> JobManager::result(const std::string& job_id) const {
    std::lock_guard lock(mutex_);
    return find(job_id)->result;
}

JobSnapshot JobManager::cancel(const std::string& job_id) {
    std::lock_guard lock(mutex_);
    auto job = find(job_id);
    auto& s = job->snapshot;
    if (is_terminal(s.state))
        fail(ErrorCode::AlreadyTerminal,
             "job '" + job_id + "' is already " + std::string(to_string(s.state)));
    job->cancel_requested = true;
    if (s.state == JobState::Pending)
        queue_.erase(std::remove(queue_.begin(), queue_.end(), job), queue_.end());
    s.state = JobState::Cancelled;
    changed_.notify_all();
    return s;
}

JobSnapshot JobManager::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    auto job = find(job_id);
    changed_.wait_for(lock, timeout, [&] { return is_terminal(job->snapshot.state); });
    return job->snapshot;
}

std::vector<JobSnapshot> JobManager::list() const {
    std::lock_guard lock(mutex_);
    std::vector<JobSnapshot> out;
    for (const auto& [_, job] : jobs_) out.push_back(job->snapshot);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.submitted_at < b.submitted_at;
    });
    return out;
}

void JobManager::worker_loop() {
    while (true) {
        std::shared_ptr<Job> job;
        {
            std::unique_lock lock(mutex_);
            work_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            job = queue_.front();
            queue_.pop_front();
            job->snapshot.state = JobState::Running;
            changed_.notify_all();
        }

        Context ctx(*this, *job);
        std::optional<json> result;
        std::optional<std::pair<std::string, std::string>> error;
        try {
            result = job->fn(ctx);
        } catch (const Error& e) {
            error.emplace(std::string(to_string(e.code())), e.what());
        } catch (const std::exception& e) {
            error.emplace("Internal", e.what());
        }

        std::lock_guard lock(mutex_);
        auto& s = job->snapshot;
        if (s.state == JobState::Running) {
            if (error) {
                s.state = JobState::Failed;
                s.error_code = error->first;
                s.error = error->second;
                spdlog::warn("job {} failed: {}", s.job_id, error->second);
            } else {
                s.state = JobState::Done;
                s.progress = 1.0;
                s.completed = std::max(s.completed, s.total);
                job->result = std::move(result);
            }
        }
        job->fn = nullptr;
        changed_.notify_all();
    }
}

}  // namespace toxiscope
