#include "fam/metrics.hpp"

namespace fam {

MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes,
                              Averaging averaging) {
    if (predictions.empty()) throw InputError("compute_metrics: empty input");
    if (predictions.size() != labels.size()) {
        throw InputError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    if (n_classes < 2) throw InputError("compute_metrics: need at least two classes");

    MetricsReport rep;
    rep.n_classes = n_classes;
    rep.n_examples = static_cast<std::int64_t>(predictions.size());
    rep.confusion.assign(static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], l = labels[i];
        if (p < 0 || p >= n_classes || l < 0 || l >= n_classes) {
            throw InputError("compute_metrics: class id out of range");
        }
        rep.confusion[static_cast<std::size_t>(l) * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(p)]++;
    }

    std::int64_t diag = 0;
    for (int c = 0; c < n_classes; ++c) diag += rep.confusion_at(c, c);
    rep.accuracy = static_cast<double>(diag) / static_cast<double>(rep.n_examples);

    for (int c = 0; c < n_classes; ++c) {
        std::int64_t tp = rep.confusion_at(c, c);
        std::int64_t predicted = 0, actual = 0;
        for (int o = 0; o < n_classes; ++o) {
            predicted += rep.confusion_at(o, c);
            actual += rep.confusion_at(c, o);
        }
        const double prec = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double rec = actual > 0 ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
        const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        const double w = averaging == Averaging::weighted
                             ? static_cast<double>(actual) / static_cast<double>(rep.n_examples)
                             : 1.0 / static_cast<double>(n_classes);
        rep.precision += w * prec;
        rep.recall += w * rec;
        rep.f1 += w * f1;
    }
    return rep;
}

}  // namespace fam
