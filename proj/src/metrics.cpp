#include <cmath>
#include <nlohmann/json.hpp>

#include "saanet/errors.hpp"
#include "saanet/head.hpp"

namespace saanet {

Metrics compute_metrics(std::span<const double> preds, std::span<const double> gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw ContractError("metrics need equal-length, nonempty count lists (got " + std::to_string(preds.size()) +
                            " and " + std::to_string(gts.size()) + ")");
    }
    Metrics m;
    m.n_samples = preds.size();
    double abs_sum = 0, sq_sum = 0, nae_sum = 0;
    std::size_t nae_n = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double err = std::abs(preds[i] - gts[i]);
        abs_sum += err;
        sq_sum += err * err;
        if (gts[i] > 0) {
            nae_sum += err / gts[i];
            ++nae_n;
        } else {
            ++m.n_excluded;
        }
    }
    const double n = static_cast<double>(preds.size());
    m.mae = abs_sum / n;
    m.mse = std::sqrt(sq_sum / n);
    if (nae_n > 0) m.nae = nae_sum / static_cast<double>(nae_n);
    return m;
}

std::string Metrics::to_json() const {
    nlohmann::ordered_json j;
    j["mae"] = mae;
    j["mse"] = mse;
    j["nae"] = nae ? nlohmann::ordered_json(*nae) : nlohmann::ordered_json(nullptr);
    j["n_samples"] = n_samples;
    j["n_excluded"] = n_excluded;
    return j.dump(2) + "\n";
}

}  // namespace saanet
