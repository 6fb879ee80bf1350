#include "fewshot/harness.hpp"

#include "fewshot/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace fewshot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Independent (seed) work items run in parallel; every item writes only its
// own output slot, so results are identical to the serial order.
template <typename Fn>
void parallel_indices(std::size_t n, int workers, Fn&& fn) {
    unsigned count = workers > 0 ? static_cast<unsigned>(workers)
                                 : std::max(1u, std::thread::hardware_concurrency());
    count = std::min<unsigned>(count, n);
    if (count <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(count);
    for (unsigned t = 0; t < count; ++t)
        threads.emplace_back(worker);
    for (auto& t : threads)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

MethodConfig method_config(const ExperimentSpec& spec, Method method, MetaRetrieval mr) {
    if (method == Method::maml) {
        MamlConfig cfg = spec.maml;
        // Coarse-grained retrieval meta-learning: learned per-group inner
        // rates plus similarity-weighted loss. MAML only.
        if (mr == MetaRetrieval::coarse || mr == MetaRetrieval::both) {
            cfg.learn_inner_lrs = true;
            cfg.weighted_loss = true;
        }
        return cfg;
    }
    return spec.proto;
}

bool uses_channel(MetaRetrieval mr) {
    return mr == MetaRetrieval::fine || mr == MetaRetrieval::both;
}

struct CellClock {
    Clock::time_point start = Clock::now();
    double stop() const { return seconds_since(start); }
};

void sort_rows(std::vector<ResultRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        auto key = [](const ResultRow& r) {
            return std::make_tuple(r.experiment, to_string(r.method), r.a,
                                   to_string(r.meta_retrieval), r.dataset_train, r.dataset_eval,
                                   r.seed);
        };
        return key(a) < key(b);
    });
}

// All cells of one seed for a list of meta-retrieval passes, sharing one
// retrieval cache. run_sweep passes a single mode and run_ablation all four,
// so the ablation's none rows are bit-identical to a plain sweep.
std::vector<ResultRow> seed_cells(const ExperimentSpec& spec, const DatasetBundle& ds,
                                  std::span<const MetaRetrieval> passes, std::uint64_t seed,
                                  std::size_t a_max) {
    AugmentCache cache(a_max);
    std::vector<ResultRow> rows;
    for (MetaRetrieval mr : passes) {
        const bool channel = uses_channel(mr);
        TrainOptions opts = spec.train;
        opts.similarity_channel = channel;
        // ZS ignores retrieval and training configuration; one copy suffices.
        const bool include_zs = mr == MetaRetrieval::none || passes.size() == 1;

        for (Method method : spec.methods) {
            if (method == Method::zs) {
                if (!include_zs)
                    continue;
                CellClock clock;
                EvalStats stats = evaluate_untrained(Method::zs, ds, Split::test,
                                                     opts.eval_episodes, spec.episode, seed, false,
                                                     &cache);
                rows.push_back({spec.name, ds.name, ds.name, Method::zs, 0, mr, seed,
                                stats.accuracy, stats.episode_std, clock.stop()});
                continue;
            }
            for (std::size_t a : spec.a_sweep) {
                EpisodeConfig ec = spec.episode;
                ec.a_augment = a;
                CellClock clock;
                EvalStats stats;
                if (method == Method::lr) {
                    stats = evaluate_untrained(Method::lr, ds, Split::test, opts.eval_episodes, ec,
                                               seed, channel, &cache);
                } else {
                    TrainedModel model = train_model(method_config(spec, method, mr), ds, ec, opts,
                                                     seed, &cache);
                    stats = evaluate_model(model, ds, Split::test, opts.eval_episodes, ec, seed,
                                           &cache);
                }
                rows.push_back({spec.name, ds.name, ds.name, method, a, mr, seed, stats.accuracy,
                                stats.episode_std, clock.stop()});
            }
        }
    }
    return rows;
}

std::vector<ResultRow> run_passes(const ExperimentSpec& spec, const DatasetBundle& ds,
                                  std::span<const MetaRetrieval> passes) {
    if (spec.a_sweep.empty())
        throw data_error("experiment needs a non-empty a_sweep");
    if (spec.methods.empty())
        throw data_error("experiment needs at least one method");
    std::size_t a_max = 0;
    for (std::size_t a : spec.a_sweep)
        a_max = std::max(a_max, a);

    std::vector<std::vector<ResultRow>> per_seed(spec.seeds.size());
    parallel_indices(spec.seeds.size(), spec.train.workers, [&](std::size_t i) {
        per_seed[i] = seed_cells(spec, ds, passes, spec.seeds[i], a_max);
    });
    std::vector<ResultRow> rows;
    for (auto& part : per_seed)
        rows.insert(rows.end(), part.begin(), part.end());
    sort_rows(rows);
    return rows;
}

} // namespace

std::string to_string(MetaRetrieval m) {
    switch (m) {
    case MetaRetrieval::none: return "none";
    case MetaRetrieval::fine: return "fine";
    case MetaRetrieval::coarse: return "coarse";
    case MetaRetrieval::both: return "both";
    }
    return "none";
}

MetaRetrieval meta_retrieval_from_string(const std::string& s) {
    if (s == "none")
        return MetaRetrieval::none;
    if (s == "fine")
        return MetaRetrieval::fine;
    if (s == "coarse")
        return MetaRetrieval::coarse;
    if (s == "both")
        return MetaRetrieval::both;
    throw data_error("unknown meta-retrieval mode '" + s + "'");
}

std::vector<ResultRow> run_sweep(const ExperimentSpec& spec, const DatasetBundle& ds) {
    const MetaRetrieval passes[] = {spec.meta_retrieval};
    return run_passes(spec, ds, passes);
}

std::vector<ResultRow> run_ablation(const ExperimentSpec& spec, const DatasetBundle& ds) {
    const MetaRetrieval passes[] = {MetaRetrieval::none, MetaRetrieval::fine, MetaRetrieval::coarse,
                                    MetaRetrieval::both};
    return run_passes(spec, ds, passes);
}

std::vector<ResultRow> run_cross_eval(const ExperimentSpec& spec, const DatasetBundle& ds_a,
                                      const DatasetBundle& ds_b) {
    if (spec.a_sweep.empty())
        throw data_error("run_cross_eval: a_sweep must not be empty");
    if (spec.methods.empty())
        throw data_error("run_cross_eval: no methods requested");
    if (ds_a.eval->dim != ds_b.eval->dim)
        throw data_error("run_cross_eval: datasets have different embedding dims");

    std::size_t a_max = 0;
    for (std::size_t a : spec.a_sweep)
        a_max = std::max(a_max, a);
    const MetaRetrieval mr = spec.meta_retrieval;
    TrainOptions opts = spec.train;
    opts.similarity_channel = uses_channel(mr);
    const DatasetBundle* bundles[2] = {&ds_a, &ds_b};

    auto seed_work = [&](std::uint64_t seed) {
        AugmentCache cache(a_max);
        std::vector<ResultRow> rows;
        for (Method method : spec.methods) {
            if (method == Method::maml || method == Method::protonet) {
                for (std::size_t a : spec.a_sweep) {
                    EpisodeConfig ec = spec.episode;
                    ec.a_augment = a;
                    for (const DatasetBundle* train_ds : bundles) {
                        CellClock clock;
                        TrainedModel model = train_model(method_config(spec, method, mr),
                                                         *train_ds, ec, opts, seed, &cache);
                        for (const DatasetBundle* eval_ds : bundles) {
                            EvalStats stats = evaluate_model(model, *eval_ds, Split::test,
                                                             opts.eval_episodes, ec, seed, &cache);
                            rows.push_back({spec.name, train_ds->name, eval_ds->name, method, a,
                                            mr, seed, stats.accuracy, stats.episode_std,
                                            clock.stop()});
                        }
                    }
                }
                continue;
            }
            // LR and ZS have no meta-training: accuracy depends only on the
            // evaluation dataset, so both train labels carry the same value.
            auto emit_untrained = [&](std::size_t a, bool channel) {
                EpisodeConfig ec = spec.episode;
                ec.a_augment = a;
                for (const DatasetBundle* eval_ds : bundles) {
                    CellClock clock;
                    EvalStats stats = evaluate_untrained(method, *eval_ds, Split::test,
                                                         opts.eval_episodes, ec, seed, channel,
                                                         &cache);
                    const double wall = clock.stop();
                    for (const DatasetBundle* train_ds : bundles)
                        rows.push_back({spec.name, train_ds->name, eval_ds->name, method, a, mr,
                                        seed, stats.accuracy, stats.episode_std, wall});
                }
            };
            if (method == Method::zs)
                emit_untrained(0, false);
            else
                for (std::size_t a : spec.a_sweep)
                    emit_untrained(a, uses_channel(mr));
        }
        return rows;
    };

    std::vector<std::vector<ResultRow>> per_seed(spec.seeds.size());
    parallel_indices(spec.seeds.size(), spec.train.workers, [&](std::size_t i) {
        per_seed[i] = seed_work(spec.seeds[i]);
    });
    std::vector<ResultRow> rows;
    for (auto& part : per_seed)
        rows.insert(rows.end(), part.begin(), part.end());
    sort_rows(rows);
    return rows;
}

namespace {

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos)
        return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string fmt(double value, const char* spec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, value);
    return buf;
}

} // namespace

void emit_csv(std::span<const ResultRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw data_error("cannot open for writing: " + path.string());
    out << "experiment,dataset_train,dataset_eval,method,A,meta_retrieval,seed,"
           "test_accuracy,accuracy_std,wall_time_seconds\n";
    for (const auto& r : rows) {
        out << csv_quote(r.experiment) << ',' << csv_quote(r.dataset_train) << ','
            << csv_quote(r.dataset_eval) << ',' << to_string(r.method) << ',' << r.a << ','
            << to_string(r.meta_retrieval) << ',' << r.seed << ','
            << fmt(r.test_accuracy, "%.4f") << ',' << fmt(r.accuracy_std, "%.4f") << ','
            << fmt(r.wall_time_seconds, "%.3f") << '\n';
    }
    if (!out)
        throw data_error("write failed: " + path.string());
}

std::vector<ResultRow> parse_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw data_error("cannot open csv: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    // RFC-4180 field scanner.
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            record.push_back(std::move(field));
            field.clear();
            if (!(record.size() == 1 && record[0].empty()))
                records.push_back(std::move(record));
            record.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (!field.empty() || !record.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }

    if (records.empty())
        throw data_error("csv has no header: " + path.string());
    std::vector<ResultRow> rows;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (rec.size() != 10)
            throw data_error("csv row " + std::to_string(i) + " has " +
                             std::to_string(rec.size()) + " fields, expected 10");
        ResultRow row;
        row.experiment = rec[0];
        row.dataset_train = rec[1];
        row.dataset_eval = rec[2];
        row.method = method_from_string(rec[3]);
        row.a = static_cast<std::size_t>(std::stoull(rec[4]));
        row.meta_retrieval = meta_retrieval_from_string(rec[5]);
        row.seed = std::stoull(rec[6]);
        row.test_accuracy = std::stod(rec[7]);
        row.accuracy_std = std::stod(rec[8]);
        row.wall_time_seconds = std::stod(rec[9]);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace fewshot
