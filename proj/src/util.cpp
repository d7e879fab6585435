#include "toxiscope/util.hpp"

#include "toxiscope/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace toxiscope {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NoTextColumn: return "NoTextColumn";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::WrongLayout: return "WrongLayout";
        case ErrorCode::BuiltinProtected: return "BuiltinProtected";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::MissingMember: return "MissingMember";
        case ErrorCode::KOutOfRange: return "KOutOfRange";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
        case ErrorCode::LmUnavailable: return "LmUnavailable";
        case ErrorCode::ContextTooLong: return "ContextTooLong";
        case ErrorCode::StreamInterrupted: return "StreamInterrupted";
        case ErrorCode::LogprobsUnsupported: return "LogprobsUnsupported";
        case ErrorCode::CapabilityMissing: return "CapabilityMissing";
        case ErrorCode::InvalidResponse: return "InvalidResponse";
        case ErrorCode::EmptyConversation: return "EmptyConversation";
        case ErrorCode::EmptyScores: return "EmptyScores";
        case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
        case ErrorCode::EmptySummary: return "EmptySummary";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::UnknownTemplate: return "UnknownTemplate";
        case ErrorCode::MissingBinding: return "MissingBinding";
        case ErrorCode::PreconditionViolation: return "PreconditionViolation";
        case ErrorCode::ValidationError: return "ValidationError";
        case ErrorCode::QueueFull: return "QueueFull";
        case ErrorCode::AlreadyTerminal: return "AlreadyTerminal";
        case ErrorCode::Cancelled: return "Cancelled";
    }
    return "Unknown";
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos;
         pos = haystack.find(needle, pos + needle.size()))
        ++n;
    return n;
}

std::string substitute(std::string_view body,
                       const std::map<std::string, std::string>& bindings, char open,
                       char close) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == open) {
            auto end = body.find(close, i + 1);
            if (end != std::string_view::npos) {
                auto it = bindings.find(std::string(body.substr(i + 1, end - i - 1)));
                if (it != bindings.end()) {
                    out.append(it->second);
                    i = end + 1;
                    continue;
                }
            }
        }
        out.push_back(body[i]);
        ++i;
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string now_iso8601() {
    using namespace std::chrono;
    auto now = system_clock::now();
    auto secs = system_clock::to_time_t(now);
    auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0')
       << ms << 'Z';
    return ss.str();
}

void parallel_for(std::size_t n, std::size_t max_parallel,
                  const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t workers = std::clamp<std::size_t>(max_parallel, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace toxiscope
