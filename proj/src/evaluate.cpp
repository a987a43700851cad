#include "ma2mi/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ma2mi::eval {

using cfg::json;

void ConfusionMatrix::add(int truth, int pred, long long k) {
    if (truth < 0 || truth >= n || pred < 0 || pred >= n)
        throw std::out_of_range("ConfusionMatrix::add: class index out of range");
    counts[(size_t)truth * n + pred] += k;
}

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (long long c : counts) t += c;
    return t;
}

long long ConfusionMatrix::trace() const {
    long long t = 0;
    for (int i = 0; i < n; ++i) t += at(i, i);
    return t;
}

void ConfusionMatrix::accumulate(const ConfusionMatrix& other) {
    if (other.n != n) throw std::invalid_argument("ConfusionMatrix::accumulate: size mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

double accuracy(const ConfusionMatrix& cm) {
    long long t = cm.total();
    if (t == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
    return (double)cm.trace() / (double)t;
}

double uf1(const ConfusionMatrix& cm) {
    if (cm.n == 0 || cm.total() == 0) throw std::invalid_argument("uf1: empty confusion matrix");
    double acc = 0;
    for (int i = 0; i < cm.n; ++i) {
        long long tp = cm.at(i, i), fn = 0, fp = 0;
        for (int j = 0; j < cm.n; ++j) {
            if (j == i) continue;
            fn += cm.at(i, j);
            fp += cm.at(j, i);
        }
        long long denom = 2 * tp + fn + fp;
        acc += denom == 0 ? 0.0 : (double)(2 * tp) / (double)denom;
    }
    return acc / cm.n;
}

namespace {

json cm_to_json(const ConfusionMatrix& cm) {
    json rows = json::array();
    for (int i = 0; i < cm.n; ++i) {
        json row = json::array();
        for (int j = 0; j < cm.n; ++j) row.push_back(cm.at(i, j));
        rows.push_back(row);
    }
    return rows;
}

json pred_to_json(const Prediction& p) {
    json j{{"clip_id", p.clip_id}, {"pred", p.pred}, {"probs", p.probs}};
    if (p.truth >= 0)
        j["true"] = p.truth;
    else
        j["true"] = nullptr;
    return j;
}

}  // namespace

json AggregateReport::to_json() const {
    json folds_j = json::array();
    for (auto& f : folds) {
        json preds = json::array();
        for (auto& p : f.preds) preds.push_back(pred_to_json(p));
        folds_j.push_back(json{{"fold", f.fold},
                               {"accuracy", f.fold_accuracy},
                               {"uf1", f.fold_uf1},
                               {"confusion", cm_to_json(f.cm)},
                               {"warnings", f.warnings},
                               {"predictions", preds}});
    }
    return json{{"protocol", protocol},
                {"seed", seed},
                {"folds", folds_j},
                {"pooled_confusion", cm_to_json(pooled)},
                {"accuracy", pooled_accuracy},
                {"uf1", pooled_uf1},
                {"config_hash", config_hash}};
}

AggregateReport run_protocol(const std::vector<data::ClipRecord>& records,
                             const data::SplitPlan& plan, const std::string& pretrain_checkpoint,
                             const cfg::json& model_j, const train::FinetuneSettings& ft,
                             long long seed, const std::string& config_hash, bool verbose) {
    std::map<std::string, const data::ClipRecord*> by_id;
    for (auto& r : records) by_id[r.clip_id] = &r;
    auto lookup = [&](const std::string& id) -> const data::ClipRecord& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw std::runtime_error("split references unknown clip " + id);
        return *it->second;
    };

    AggregateReport report;
    report.protocol = plan.protocol == data::Protocol::LOSO ? "LOSO" : "KFOLD";
    report.seed = seed;
    report.config_hash = config_hash;
    report.pooled = ConfusionMatrix(ft.num_classes);

    for (size_t k = 0; k < plan.folds.size(); ++k) {
        const auto& fold = plan.folds[k];
        std::vector<data::ClipRecord> train_records;
        for (auto& id : fold.train) train_records.push_back(lookup(id));

        FoldResult fr;
        fr.fold = (int)k;
        fr.cm = ConfusionMatrix(ft.num_classes);

        std::set<int> train_classes;
        for (auto& r : train_records)
            if (r.label) train_classes.insert(*r.label);
        for (int c = 0; c < ft.num_classes; ++c)
            if (!train_classes.count(c))
                fr.warnings.push_back("class " + std::to_string(c) +
                                      " absent from training clips");

        // independent but reproducible fold: base seed + fold index
        long long fold_seed = seed + (long long)k;
        train::Pipeline p = train::init_finetune_pipeline(pretrain_checkpoint, model_j,
                                                          ft.input_size, fold_seed);
        p.net.attach_head(ft.num_classes);
        Rng fold_root((uint64_t)fold_seed);
        Rng train_rng = fold_root.child(5);
        train::run_finetune_loop(p, train_records, ft, train_rng, nullptr);

        for (auto& id : fold.test) {
            const auto& rec = lookup(id);
            train::PredictResult pr = train::predict(p, rec, ft.input_size);
            Prediction pred;
            pred.clip_id = id;
            pred.truth = rec.label ? *rec.label : -1;
            pred.pred = pr.pred;
            pred.probs = pr.probs;
            if (pred.truth >= 0) fr.cm.add(pred.truth, pred.pred);
            fr.preds.push_back(std::move(pred));
        }
        if (fr.cm.total() > 0) {
            fr.fold_accuracy = accuracy(fr.cm);
            fr.fold_uf1 = uf1(fr.cm);
        }
        report.pooled.accumulate(fr.cm);
        if (verbose)
            std::fprintf(stderr, "fold %zu/%zu: acc %.4f uf1 %.4f\n", k + 1, plan.folds.size(),
                         fr.fold_accuracy, fr.fold_uf1);
        report.folds.push_back(std::move(fr));
    }
    report.pooled_accuracy = accuracy(report.pooled);
    report.pooled_uf1 = uf1(report.pooled);
    return report;
}

void write_predictions(const std::string& path, const std::vector<Prediction>& preds) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (auto& p : preds) f << pred_to_json(p).dump() << "\n";
}

json compare_runs(const json& report_a, const json& report_b) {
    size_t na = report_a.at("pooled_confusion").size();
    size_t nb = report_b.at("pooled_confusion").size();
    if (na != nb)
        throw std::invalid_argument("compare_runs: class counts differ (" + std::to_string(na) +
                                    " vs " + std::to_string(nb) + ")");
    auto meta = [](const json& r) {
        return json{{"protocol", r.at("protocol")},
                    {"seed", r.at("seed")},
                    {"config_hash", r.at("config_hash")},
                    {"accuracy", r.at("accuracy")},
                    {"uf1", r.at("uf1")}};
    };
    double da = report_b.at("accuracy").get<double>() - report_a.at("accuracy").get<double>();
    double du = report_b.at("uf1").get<double>() - report_a.at("uf1").get<double>();
    return json{{"a", meta(report_a)},
                {"b", meta(report_b)},
                {"delta", {{"accuracy", da}, {"uf1", du}}}};
}

std::string format_compare(const json& delta) {
    std::ostringstream os;
    char buf[256];
    auto row = [&](const char* name, const json& r) {
        std::snprintf(buf, sizeof buf, "%-10s acc %.4f  uf1 %.4f  (%s, seed %lld, cfg %s)\n",
                      name, r.at("accuracy").get<double>(), r.at("uf1").get<double>(),
                      r.at("protocol").get<std::string>().c_str(),
                      (long long)r.at("seed").get<long long>(),
                      r.at("config_hash").get<std::string>().c_str());
        os << buf;
    };
    row("run a", delta.at("a"));
    row("run b", delta.at("b"));
    std::snprintf(buf, sizeof buf, "%-10s acc %+.4f  uf1 %+.4f\n", "b - a",
                  delta.at("delta").at("accuracy").get<double>(),
                  delta.at("delta").at("uf1").get<double>());
    os << buf;
    return os.str();
}

}  // namespace ma2mi::eval
