#include "mieval/annotation.hpp"

#include <unistd.h>

#include <algorithm>

#include <httplib.h>

#include "mieval/error.hpp"

namespace mieval {

namespace fs = std::filesystem;

std::string_view to_string(Vote v) {
    switch (v) {
        case Vote::yes: return "yes";
        case Vote::no: return "no";
        case Vote::skip: return "skip";
    }
    return "?";
}

Vote parse_vote(std::string_view s) {
    if (s == "yes") return Vote::yes;
    if (s == "no") return Vote::no;
    if (s == "skip") return Vote::skip;
    throw ValidationError("vote must be yes, no or skip, got '" + std::string(s) + "'");
}

json to_json(const AnnotationVote& v) {
    return json{{"annotator_id", v.annotator_id},
                {"query_id", v.query_id},
                {"vote", to_string(v.vote)},
                {"submitted_at", v.submitted_at}};
}

AnnotationVote parse_annotation_vote(const json& j) {
    try {
        AnnotationVote v;
        v.annotator_id = j.at("annotator_id").get<std::string>();
        v.query_id = j.at("query_id").get<std::string>();
        v.vote = parse_vote(j.at("vote").get<std::string>());
        v.submitted_at = j.value("submitted_at", "");
        if (v.annotator_id.empty()) throw ValidationError("annotator_id is empty");
        if (v.query_id.empty()) throw ValidationError("query_id is empty");
        return v;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("vote: ") + e.what());
    }
}

void AgreementPolicy::validate() const {
    if (n_annotators < 1 || min_agree < 1) throw ValidationError("agreement policy values must be positive");
    if (min_agree > n_annotators) throw ValidationError("min_agree exceeds n_annotators");
    if (2 * min_agree <= n_annotators) throw ValidationError("min_agree must be a strict majority of n_annotators");
}

std::vector<AnnotationVote> effective_votes(std::span<const AnnotationVote> votes) {
    std::map<std::pair<std::string, std::string>, AnnotationVote> latest;
    for (const auto& v : votes) {
        auto key = std::make_pair(v.query_id, v.annotator_id);
        auto it = latest.find(key);
        if (it == latest.end()) {
            latest.emplace(std::move(key), v);
        } else if (std::tie(v.submitted_at, v.vote) > std::tie(it->second.submitted_at, it->second.vote)) {
            it->second = v;
        }
    }
    std::vector<AnnotationVote> out;
    out.reserve(latest.size());
    for (auto& [_, v] : latest) out.push_back(std::move(v));
    return out;
}

AgreementResult agreement_filter(std::span<const AnnotationVote> votes, const AgreementPolicy& policy) {
    policy.validate();
    std::map<std::string, QueryTally> tallies;
    for (const auto& v : effective_votes(votes)) {
        auto& t = tallies[v.query_id];
        switch (v.vote) {
            case Vote::yes: ++t.yes; break;
            case Vote::no: ++t.no; break;
            case Vote::skip: ++t.skip; break;
        }
    }
    const auto n = static_cast<std::size_t>(policy.n_annotators);
    const auto k = static_cast<std::size_t>(policy.min_agree);
    AgreementResult out;
    for (const auto& [id, t] : tallies) {
        const std::size_t cast = t.yes + t.no;
        if (cast < n) {
            out.dropped.push_back({id, t, "under-voted: " + std::to_string(cast) + " of " + std::to_string(n) +
                                              " non-skip votes"});
        } else if (cast > n) {
            out.dropped.push_back({id, t, "over-voted: " + std::to_string(cast) + " non-skip votes, expected " +
                                              std::to_string(n)});
        } else if (std::max(t.yes, t.no) < k) {
            out.dropped.push_back({id, t, "no " + std::to_string(k) + "-of-" + std::to_string(n) + " agreement (" +
                                              std::to_string(t.yes) + " yes, " + std::to_string(t.no) + " no)"});
        } else {
            out.retained.push_back({id, t.yes > t.no, t});
        }
    }
    return out;
}

OracleTable export_oracle(const AgreementResult& agreement, std::span<const EvalQuery> queries) {
    std::map<std::string_view, const EvalQuery*> by_id;
    for (const auto& q : queries) by_id.emplace(q.query_id, &q);
    std::vector<OracleLabel> labels;
    labels.reserve(agreement.retained.size());
    for (const auto& r : agreement.retained) {
        auto it = by_id.find(r.query_id);
        if (it == by_id.end()) throw ValidationError("export: retained query '" + r.query_id + "' is not a task");
        labels.push_back(
            OracleLabel{it->second->probe.image_id, it->second->target, r.label, OracleSource::human_majority});
    }
    return OracleTable(std::move(labels));
}

// ---------------------------------------------------------------------------

AnnotationStore::AnnotationStore(std::vector<EvalQuery> tasks, fs::path log_path, AgreementPolicy policy)
    : tasks_(std::move(tasks)), log_path_(std::move(log_path)), policy_(policy) {
    policy_.validate();
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (!index_.emplace(tasks_[i].query_id, i).second) {
            throw ValidationError("duplicate annotation task '" + tasks_[i].query_id + "'");
        }
    }
    if (log_path_.empty()) return;
    if (fs::exists(log_path_)) {
        for_each_ndjson(log_path_, [&](std::size_t line, const json& j) {
            AnnotationVote v = parse_annotation_vote(j);
            if (!index_.contains(v.query_id)) {
                throw ValidationError(log_path_.string() + ":" + std::to_string(line) + ": unknown query '" +
                                      v.query_id + "'");
            }
            apply(v);
        });
    } else if (log_path_.has_parent_path()) {
        fs::create_directories(log_path_.parent_path());
    }
    log_ = std::fopen(log_path_.c_str(), "a");
    if (log_ == nullptr) throw ConfigError("cannot open vote log " + log_path_.string());
}

AnnotationStore::~AnnotationStore() {
    if (log_ != nullptr) std::fclose(log_);
}

const EvalQuery* AnnotationStore::find_task(std::string_view query_id) const {
    auto it = index_.find(query_id);
    return it == index_.end() ? nullptr : &tasks_[it->second];
}

void AnnotationStore::apply(const AnnotationVote& v) { votes_[v.query_id][v.annotator_id] = v; }

void AnnotationStore::append_log(const AnnotationVote& v) {
    if (log_ == nullptr) return;
    const std::string line = to_json(v).dump() + "\n";
    if (std::fputs(line.c_str(), log_) < 0 || std::fflush(log_) != 0 || ::fsync(::fileno(log_)) != 0) {
        throw Error("cannot append to vote log " + log_path_.string());
    }
}

SubmitStatus AnnotationStore::submit(const std::string& annotator_id, const std::string& query_id, Vote vote) {
    if (annotator_id.empty()) throw ValidationError("annotator_id is empty");
    if (!index_.contains(query_id)) throw ValidationError("unknown query '" + query_id + "'");
    std::unique_lock lock(mutex_);
    auto& per_query = votes_[query_id];
    const bool replacing = per_query.contains(annotator_id);
    if (!replacing && per_query.size() >= static_cast<std::size_t>(policy_.n_annotators)) {
        return SubmitStatus::quorum_full;
    }
    const AnnotationVote v{annotator_id, query_id, vote, utc_timestamp()};
    append_log(v);
    apply(v);
    return replacing ? SubmitStatus::replaced : SubmitStatus::recorded;
}

std::vector<std::string> AnnotationStore::pending(const std::string& annotator_id) const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& t : tasks_) {
        auto it = votes_.find(t.query_id);
        if (it == votes_.end() || !it->second.contains(annotator_id)) out.push_back(t.query_id);
    }
    return out;
}

std::optional<Vote> AnnotationStore::vote_of(const std::string& annotator_id, const std::string& query_id) const {
    std::shared_lock lock(mutex_);
    auto it = votes_.find(query_id);
    if (it == votes_.end()) return std::nullopt;
    auto jt = it->second.find(annotator_id);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second.vote;
}

std::size_t AnnotationStore::effective_count(const std::string& query_id) const {
    std::shared_lock lock(mutex_);
    auto it = votes_.find(query_id);
    return it == votes_.end() ? 0 : it->second.size();
}

std::vector<AnnotationVote> AnnotationStore::snapshot() const {
    std::shared_lock lock(mutex_);
    std::vector<AnnotationVote> out;
    for (const auto& [_, per_query] : votes_) {
        for (const auto& [__, v] : per_query) out.push_back(v);
    }
    return out;
}

bool AnnotationStore::quorum_reached() const {
    std::shared_lock lock(mutex_);
    return std::all_of(tasks_.begin(), tasks_.end(), [&](const EvalQuery& t) {
        auto it = votes_.find(t.query_id);
        return it != votes_.end() && it->second.size() >= static_cast<std::size_t>(policy_.n_annotators);
    });
}

json agreement_json(const AnnotationStore& store) {
    const auto votes = store.snapshot();
    const auto& policy = store.policy();
    const auto result = agreement_filter(votes, policy);
    std::map<std::string, QueryTally> tallies;
    for (const auto& v : votes) {
        auto& t = tallies[v.query_id];
        if (v.vote == Vote::yes) ++t.yes;
        if (v.vote == Vote::no) ++t.no;
        if (v.vote == Vote::skip) ++t.skip;
    }
    std::map<std::string, const RetainedQuery*> retained;
    for (const auto& r : result.retained) retained[r.query_id] = &r;
    std::map<std::string, const DroppedQuery*> dropped;
    for (const auto& d : result.dropped) dropped[d.query_id] = &d;

    const auto n = static_cast<std::size_t>(policy.n_annotators);
    const auto k = static_cast<std::size_t>(policy.min_agree);
    json rows = json::array();
    std::size_t n_retained = 0, n_dropped = 0, n_pending = 0;
    for (const auto& task : store.tasks()) {
        const QueryTally t = tallies.count(task.query_id) ? tallies.at(task.query_id) : QueryTally{};
        json row{{"query_id", task.query_id}, {"yes", t.yes},   {"no", t.no},
                 {"skip", t.skip},            {"effective", t.effective()}, {"label", nullptr}};
        if (t.effective() >= n) {
            if (auto it = retained.find(task.query_id); it != retained.end()) {
                row["status"] = "retained";
                row["label"] = it->second->label ? "yes" : "no";
                ++n_retained;
            } else {
                row["status"] = "dropped";
                row["reason"] = dropped.at(task.query_id)->reason;
                ++n_dropped;
            }
        } else {
            const std::size_t remaining = n - t.effective();
            // A standing skip leaves the query short of n non-skip votes unless replaced.
            const bool hopeless = t.skip > 0 || std::max(t.yes, t.no) + remaining < k;
            row["status"] = hopeless ? "will_drop" : "pending";
            ++n_pending;
        }
        rows.push_back(std::move(row));
    }
    return json{{"policy", {{"n_annotators", policy.n_annotators}, {"min_agree", policy.min_agree}}},
                {"quorum_reached", store.quorum_reached()},
                {"retained", n_retained},
                {"dropped", n_dropped},
                {"pending", n_pending},
                {"queries", rows}};
}

// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, fs::path image_dir)
    : store_(store), image_dir_(std::move(image_dir)), server_(std::make_unique<httplib::Server>()) {
    // httplib's default adds SO_REUSEPORT, which would let two servers split one port.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    srv.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string annotator = req.get_param_value("annotator");
        if (annotator.empty()) {
            send_json(res, 400, {{"errors", {{"annotator", "required query parameter"}}}});
            return;
        }
        const auto pending = store_.pending(annotator);
        send_json(res, 200,
                  {{"annotator", annotator},
                   {"pending", pending},
                   {"total", store_.tasks().size()},
                   {"completed", store_.tasks().size() - pending.size()}});
    });

    srv.Get(R"(/api/query/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const EvalQuery* q = store_.find_task(id);
        if (q == nullptr) {
            send_json(res, 404, {{"error", "unknown query '" + id + "'"}});
            return;
        }
        std::size_t position = 0;
        while (store_.tasks()[position].query_id != id) ++position;
        // Deliberately no pair kind or identity: annotators judge the image alone.
        json body{{"query_id", q->query_id},
                  {"setup_id", q->setup_id},
                  {"composed_hash", q->composed_hash ? json(*q->composed_hash) : json(nullptr)},
                  {"image_url", "/api/image/" + q->query_id},
                  {"position", position + 1},
                  {"total", store_.tasks().size()},
                  {"prior_vote", nullptr}};
        const std::string annotator = req.get_param_value("annotator");
        if (!annotator.empty()) {
            if (auto v = store_.vote_of(annotator, id)) body["prior_vote"] = to_string(*v);
        }
        send_json(res, 200, body);
    });

    srv.Get(R"(/api/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (store_.find_task(id) == nullptr) {
            send_json(res, 404, {{"error", "unknown query '" + id + "'"}});
            return;
        }
        std::vector<std::uint8_t> bytes;
        try {
            bytes = read_binary_file(image_dir_ / (id + ".png"));
        } catch (const ValidationError&) {
            send_json(res, 404, {{"error", "no composed image for '" + id + "'"}});
            return;
        }
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });

    srv.Post("/api/votes", [this](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            send_json(res, 400, {{"errors", {{"body", "not valid JSON"}}}});
            return;
        }
        json errors = json::object();
        auto string_field = [&](const char* name) -> std::string {
            if (!body.is_object() || !body.contains(name)) {
                errors[name] = "required";
            } else if (!body[name].is_string() || body[name].get<std::string>().empty()) {
                errors[name] = "must be a non-empty string";
            } else {
                return body[name].get<std::string>();
            }
            return {};
        };
        const std::string annotator = string_field("annotator_id");
        const std::string query_id = string_field("query_id");
        const std::string vote_text = string_field("vote");
        std::optional<Vote> vote;
        if (!vote_text.empty()) {
            try {
                vote = parse_vote(vote_text);
            } catch (const ValidationError&) {
                errors["vote"] = "must be one of yes, no, skip";
            }
        }
        if (!query_id.empty() && store_.find_task(query_id) == nullptr) errors["query_id"] = "unknown query";
        if (!errors.empty()) {
            send_json(res, 400, {{"errors", errors}});
            return;
        }
        const SubmitStatus status = store_.submit(annotator, query_id, *vote);
        const auto effective = store_.effective_count(query_id);
        if (status == SubmitStatus::quorum_full) {
            send_json(res, 409,
                      {{"error", "query already has " + std::to_string(effective) + " annotators"},
                       {"query_id", query_id},
                       {"effective_votes", effective}});
            return;
        }
        send_json(res, 200,
                  {{"status", status == SubmitStatus::replaced ? "replaced" : "recorded"},
                   {"query_id", query_id},
                   {"effective_votes", effective}});
    });

    srv.Get("/api/agreement",
            [this](const httplib::Request&, httplib::Response& res) { send_json(res, 200, agreement_json(store_)); });

    srv.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
        if (!store_.quorum_reached()) {
            json counts = json::object();
            for (const auto& t : store_.tasks()) counts[t.query_id] = store_.effective_count(t.query_id);
            send_json(res, 409,
                      {{"error", "quorum not reached"},
                       {"required", store_.policy().n_annotators},
                       {"counts", counts}});
            return;
        }
        const auto labels = export_oracle(agreement_filter(store_.snapshot(), store_.policy()), store_.tasks());
        res.status = 200;
        res.set_content(to_ndjson(labels), "application/x-ndjson");
    });

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const ValidationError& e) {
            send_json(res, 400, {{"errors", {{"request", e.what()}}}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        } catch (...) {
            send_json(res, 500, {{"error", "unknown error"}});
        }
    });
}

int AnnotationServer::bind(const std::string& host, int port) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
    } else {
        port_ = server_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    return port_;
}

void AnnotationServer::listen() { server_->listen_after_bind(); }

int AnnotationServer::start(const std::string& host, int port) {
    const int p = bind(host, port);
    thread_ = std::thread([this] { listen(); });
    server_->wait_until_ready();
    return p;
}

void AnnotationServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace mieval
