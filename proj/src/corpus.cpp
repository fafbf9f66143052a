#include "legalrag/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

Document::Document(std::string doc_id, std::string text) : id_(std::move(doc_id)), text_(std::move(text)) {
    if (text_.empty()) throw LoadError("document '" + id_ + "' is empty");
    if (!is_valid_utf8(text_) || text_.find('\0') != std::string::npos) {
        throw LoadError("document '" + id_ + "' is not valid UTF-8 text");
    }
    offsets_ = utf8_offsets(text_);
}

std::string_view Document::slice(Span span) const {
    if (span.start >= span.end || span.end > char_len()) {
        throw IntegrityError("span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                             ") out of bounds for '" + id_ + "' (char_len " + std::to_string(char_len()) + ")");
    }
    const std::size_t b = offsets_[span.start];
    return std::string_view(text_).substr(b, offsets_[span.end] - b);
}

std::size_t Document::char_index(std::size_t byte_offset) const {
    const auto it = std::lower_bound(offsets_.begin(), offsets_.end(), static_cast<std::uint32_t>(byte_offset));
    return static_cast<std::size_t>(it - offsets_.begin());
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    std::sort(docs_.begin(), docs_.end(), [](const Document& a, const Document& b) { return a.id() < b.id(); });
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (!by_id_.emplace(docs_[i].id(), i).second) {
            throw IntegrityError("duplicate doc_id '" + docs_[i].id() + "'");
        }
    }
}

const Document* Corpus::find(std::string_view doc_id) const {
    const auto it = by_id_.find(std::string(doc_id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

Corpus load_corpus(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw LoadError("corpus root '" + root.string() + "' is not a directory");

    std::vector<fs::path> files;
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) throw LoadError("cannot walk '" + root.string() + "': " + ec.message());
        const auto name = it->path().filename().string();
        if (!name.empty() && name.front() == '.') {
            if (it->is_directory()) it.disable_recursion_pending();
            continue;
        }
        if (it->is_regular_file()) files.push_back(it->path());
    }

    std::vector<Document> docs;
    docs.reserve(files.size());
    for (const auto& file : files) {
        const std::string doc_id = fs::relative(file, root).generic_string();
        std::ifstream in(file, std::ios::binary);
        if (!in) throw LoadError("cannot read '" + doc_id + "'");
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (in.bad()) throw LoadError("cannot read '" + doc_id + "'");
        if (bytes.empty()) {
            warn("skipping empty file '" + doc_id + "'");
            continue;
        }
        docs.emplace_back(doc_id, std::move(bytes));
    }
    if (docs.empty()) warn("corpus '" + root.string() + "' contains no documents");
    return Corpus(std::move(docs));
}

std::string canonical_domain(std::string_view label) {
    const std::string lower = to_lower_ascii(label);
    if (lower == "contractnli") return "ContractNLI";
    if (lower == "cuad") return "CUAD";
    if (lower == "maud") return "MAUD";
    if (lower == "privacy_qa" || lower == "privacyqa") return "PrivacyQA";
    return std::string(label);
}

namespace {

std::string clip(std::string_view s, std::size_t n = 160) {
    if (s.size() <= n) return std::string(s);
    return std::string(s.substr(0, n)) + "...";
}

std::string default_id(std::size_t index) {
    std::ostringstream os;
    os << 'q' << std::setw(5) << std::setfill('0') << index;
    return os.str();
}

}  // namespace

std::vector<QAPair> parse_benchmark(const json& doc, const Corpus& corpus, const std::string& fallback_domain) {
    if (!doc.is_object() || !doc.contains("tests") || !doc["tests"].is_array()) {
        throw ParseError("benchmark must be an object with a \"tests\" array");
    }
    const std::string file_domain = doc.value("domain", std::string());

    std::vector<QAPair> out;
    std::vector<std::string> problems;
    const auto& tests = doc["tests"];
    for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto& t = tests[i];
        QAPair qa;
        try {
            qa.id = t.contains("id") ? (t["id"].is_string() ? t["id"].get<std::string>() : t["id"].dump())
                                     : default_id(i);
            qa.query = t.at("query").get<std::string>();
            const auto& snippets = t.at("snippets");
            if (!snippets.is_array() || snippets.empty()) {
                problems.push_back(qa.id + ": snippets must be a non-empty list");
                continue;
            }
            for (const auto& s : snippets) {
                GroundTruthSnippet snip;
                snip.doc_id = s.at("file_path").get<std::string>();
                const auto& span = s.at("span");
                if (!span.is_array() || span.size() != 2) throw ParseError("span must be [start, end]");
                const auto start = span[0].get<long long>();
                const auto end = span[1].get<long long>();
                if (start < 0 || end < 0) {
                    problems.push_back(qa.id + ": negative span for '" + snip.doc_id + "'");
                    continue;
                }
                snip.span = Span{static_cast<std::size_t>(start), static_cast<std::size_t>(end)};
                const Document* d = corpus.find(snip.doc_id);
                if (d == nullptr) {
                    problems.push_back(qa.id + ": unknown document '" + snip.doc_id + "'");
                    continue;
                }
                if (snip.span.start >= snip.span.end || snip.span.end > d->char_len()) {
                    problems.push_back(qa.id + ": span [" + std::to_string(start) + "," + std::to_string(end) +
                                       ") out of bounds for '" + snip.doc_id + "' (char_len " +
                                       std::to_string(d->char_len()) + ")");
                    continue;
                }
                const std::string_view actual = d->slice(snip.span);
                std::string quote;
                if (s.contains("answer")) quote = s["answer"].get<std::string>();
                else if (s.contains("quote")) quote = s["quote"].get<std::string>();
                else quote = std::string(actual);
                if (quote != actual) {
                    problems.push_back(qa.id + ": quote mismatch in '" + snip.doc_id + "' at [" +
                                       std::to_string(start) + "," + std::to_string(end) + "): expected \"" +
                                       clip(quote) + "\" but document has \"" + clip(actual) + "\"");
                    continue;
                }
                snip.quote = std::move(quote);
                qa.snippets.push_back(std::move(snip));
            }
        } catch (const json::exception& e) {
            throw ParseError("benchmark test #" + std::to_string(i) + ": " + e.what());
        }
        if (qa.snippets.size() != t["snippets"].size()) continue;

        if (t.contains("domain")) {
            qa.domain = t["domain"].get<std::string>();
        } else if (!file_domain.empty()) {
            qa.domain = file_domain;
        } else {
            const auto& first = qa.snippets.front().doc_id;
            const auto slash = first.find('/');
            qa.domain = slash == std::string::npos ? fallback_domain : first.substr(0, slash);
        }
        qa.domain = canonical_domain(qa.domain);
        out.push_back(std::move(qa));
    }

    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " invalid benchmark entr" +
                          (problems.size() == 1 ? "y" : "ies") + ":";
        for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += "\n  " + problems[i];
        if (problems.size() > 20) msg += "\n  ...";
        throw IntegrityError(msg);
    }
    return out;
}

std::vector<QAPair> load_benchmark(const fs::path& path, const Corpus& corpus) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read benchmark '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("benchmark '" + path.string() + "': " + e.what());
    }
    return parse_benchmark(doc, corpus, path.stem().string());
}

json benchmark_to_json(const std::vector<QAPair>& qa) {
    json tests = json::array();
    for (const auto& q : qa) {
        json snippets = json::array();
        for (const auto& s : q.snippets) {
            snippets.push_back({{"file_path", s.doc_id}, {"span", {s.span.start, s.span.end}}, {"answer", s.quote}});
        }
        tests.push_back({{"id", q.id}, {"query", q.query}, {"domain", q.domain}, {"snippets", std::move(snippets)}});
    }
    return json{{"tests", std::move(tests)}};
}

void save_benchmark(const fs::path& path, const std::vector<QAPair>& qa) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write benchmark '" + path.string() + "'");
    out << benchmark_to_json(qa).dump(2) << '\n';
}

std::vector<std::string> snippet_docs(const QAPair& qa) {
    std::vector<std::string> docs;
    for (const auto& s : qa.snippets) docs.push_back(s.doc_id);
    std::sort(docs.begin(), docs.end());
    docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
    return docs;
}

namespace {

std::string pair_key(const QAPair& qa) {
    std::string key = qa.query;
    for (const auto& s : qa.snippets) {
        key += '\x1f' + s.doc_id + ':' + std::to_string(s.span.start) + '-' + std::to_string(s.span.end);
    }
    return key;
}

struct DocGroup {
    std::vector<std::string> docs;
    std::vector<std::size_t> members;  // indices into the domain's shuffled pair list
    std::size_t taken = 0;
};

bool subset_of(const std::vector<std::string>& docs, const std::set<std::string>& selected,
               const std::vector<std::string>& extra) {
    return std::all_of(docs.begin(), docs.end(), [&](const std::string& d) {
        return selected.count(d) != 0 || std::binary_search(extra.begin(), extra.end(), d);
    });
}

}  // namespace

BenchmarkSubset sample_mini(const std::vector<QAPair>& qa, std::size_t per_domain, std::uint64_t seed) {
    std::map<std::string, std::vector<const QAPair*>> by_domain;
    {
        std::set<std::string> seen;
        for (const auto& q : qa) {
            if (seen.insert(pair_key(q)).second) by_domain[q.domain].push_back(&q);
        }
    }

    BenchmarkSubset subset;
    for (auto& [domain, pairs] : by_domain) {
        if (pairs.size() < per_domain) {
            throw SamplingError("domain '" + domain + "' has " + std::to_string(pairs.size()) +
                                " unique QA pairs, fewer than the requested " + std::to_string(per_domain));
        }
        // Fisher-Yates on the raw engine output so the order is identical across standard libraries.
        std::mt19937_64 rng(seed ^ fnv1a64(domain));
        for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng() % i]);

        // Pairs with identical document sets are interchangeable for the cost model.
        std::vector<DocGroup> groups;
        std::map<std::vector<std::string>, std::size_t> group_of;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            auto docs = snippet_docs(*pairs[i]);
            auto [it, inserted] = group_of.emplace(docs, groups.size());
            if (inserted) groups.push_back(DocGroup{std::move(docs), {}, 0});
            groups[it->second].members.push_back(i);
        }

        std::vector<std::size_t> chosen;
        while (chosen.size() < per_domain) {
            const std::size_t need = per_domain - chosen.size();
            std::size_t best = groups.size();
            double best_ratio = -1.0;
            std::size_t best_new = 0;
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const auto& grp = groups[g];
                if (grp.taken == grp.members.size()) continue;
                std::size_t new_docs = 0;
                for (const auto& d : grp.docs) new_docs += subset.selected_docs.count(d) == 0 ? 1 : 0;
                if (new_docs == 0) {
                    // free pick; earliest in shuffled order among free groups
                    if (best_new != 0 || best == groups.size() ||
                        grp.members[grp.taken] < groups[best].members[groups[best].taken]) {
                        best = g;
                        best_new = 0;
                        best_ratio = 0.0;
                    }
                    continue;
                }
                if (best != groups.size() && best_new == 0) continue;
                std::size_t freed = 0;
                for (const auto& other : groups) {
                    if (subset_of(other.docs, subset.selected_docs, grp.docs)) {
                        freed += other.members.size() - other.taken;
                    }
                }
                const double ratio = static_cast<double>(std::min(freed, need)) / static_cast<double>(new_docs);
                const bool better =
                    best == groups.size() || ratio > best_ratio ||
                    (ratio == best_ratio && (new_docs < best_new ||
                                             (new_docs == best_new && grp.members[grp.taken] <
                                                                          groups[best].members[groups[best].taken])));
                if (better) {
                    best = g;
                    best_ratio = ratio;
                    best_new = new_docs;
                }
            }
            auto& grp = groups[best];
            chosen.push_back(grp.members[grp.taken++]);
            for (const auto& d : grp.docs) subset.selected_docs.insert(d);
        }

        std::sort(chosen.begin(), chosen.end());
        for (const auto i : chosen) subset.qa_pairs.push_back(*pairs[i]);
        subset.per_domain_count[domain] = per_domain;
    }
    return subset;
}

}  // namespace legalrag
