#pragma once

// Human-oracle protocol: vote storage, inter-annotator agreement and the HTTP
// service annotators talk to.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mieval/composer.hpp"
#include "mieval/corpus.hpp"

namespace httplib {
class Server;
}

namespace mieval {

enum class Vote { yes, no, skip };

std::string_view to_string(Vote v);
Vote parse_vote(std::string_view s);

struct AnnotationVote {
    std::string annotator_id;  // opaque token
    std::string query_id;
    Vote vote = Vote::skip;
    std::string submitted_at;  // UTC, lexicographically ordered

    bool operator==(const AnnotationVote&) const = default;
};

json to_json(const AnnotationVote& v);
AnnotationVote parse_annotation_vote(const json& j);

struct AgreementPolicy {
    int n_annotators = 4;
    int min_agree = 3;

    void validate() const;
};

struct QueryTally {
    std::size_t yes = 0;
    std::size_t no = 0;
    std::size_t skip = 0;
    std::size_t effective() const { return yes + no + skip; }
};

struct RetainedQuery {
    std::string query_id;
    bool label = false;  // majority vote: true = yes
    QueryTally tally;
};

struct DroppedQuery {
    std::string query_id;
    QueryTally tally;
    std::string reason;
};

struct AgreementResult {
    std::vector<RetainedQuery> retained;  // sorted by query_id
    std::vector<DroppedQuery> dropped;    // sorted by query_id
};

/// One effective vote per (annotator, query): the latest submitted_at wins
/// (ties go to the greater vote value, so the result does not depend on list
/// order). Queries need exactly n_annotators non-skip votes; a query is kept
/// iff max(yes, no) >= min_agree.
AgreementResult agreement_filter(std::span<const AnnotationVote> votes, const AgreementPolicy& policy);

/// Effective votes, same resolution as agreement_filter, sorted by (query, annotator).
std::vector<AnnotationVote> effective_votes(std::span<const AnnotationVote> votes);

/// One human_majority label per retained query, for the query's probe and target.
/// Throws ValidationError for a retained query missing from `queries`.
OracleTable export_oracle(const AgreementResult& agreement, std::span<const EvalQuery> queries);

// ---------------------------------------------------------------------------
// Vote store

enum class SubmitStatus { recorded, replaced, quorum_full };

/// Task list plus effective votes, persisted to an append-only ndjson log that
/// is replayed on construction. Every accepted vote is flushed and fsynced
/// before submit() returns.
class AnnotationStore {
public:
    AnnotationStore(std::vector<EvalQuery> tasks, std::filesystem::path log_path, AgreementPolicy policy);
    ~AnnotationStore();
    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    const std::vector<EvalQuery>& tasks() const { return tasks_; }
    const AgreementPolicy& policy() const { return policy_; }
    const EvalQuery* find_task(std::string_view query_id) const;

    /// Throws ValidationError for an unknown query id.
    SubmitStatus submit(const std::string& annotator_id, const std::string& query_id, Vote vote);

    /// Task ids the annotator has not voted on, in task order.
    std::vector<std::string> pending(const std::string& annotator_id) const;
    std::optional<Vote> vote_of(const std::string& annotator_id, const std::string& query_id) const;
    std::size_t effective_count(const std::string& query_id) const;
    /// Consistent snapshot of every effective vote.
    std::vector<AnnotationVote> snapshot() const;
    /// True when every task has n_annotators effective votes.
    bool quorum_reached() const;

private:
    void append_log(const AnnotationVote& v);
    void apply(const AnnotationVote& v);

    std::vector<EvalQuery> tasks_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::filesystem::path log_path_;
    AgreementPolicy policy_;
    mutable std::shared_mutex mutex_;
    // query_id -> annotator_id -> vote
    std::map<std::string, std::map<std::string, AnnotationVote>, std::less<>> votes_;
    std::FILE* log_ = nullptr;
};

/// Agreement preview for the coordinator view.
json agreement_json(const AnnotationStore& store);

// ---------------------------------------------------------------------------
// HTTP service

/// JSON API over an AnnotationStore. Composed images are served from
/// <image_dir>/<query_id>.png.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, std::filesystem::path image_dir);
    ~AnnotationServer();
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds host:port (0 picks an ephemeral port) and returns the bound port.
    /// Throws ConfigError when the port cannot be bound.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void listen();
    /// bind() then listen() on a background thread.
    int start(const std::string& host, int port);
    void stop();
    int port() const { return port_; }

private:
    void install_routes();

    AnnotationStore& store_;
    std::filesystem::path image_dir_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = -1;
};

}  // namespace mieval
