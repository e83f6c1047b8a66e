#include <fstream>
#include <iterator>
#include <sstream>

#include "experiment.hpp"
#include "registry.hpp"

using namespace saanet;

namespace {

constexpr std::size_t kEpochs = 5;

std::string pipeline(const std::filesystem::path& out) {
    RunConfig rc = load_run_config(acceptance::toy_config_path());
    rc.train.epochs = kEpochs;
    const auto splits = acceptance::make_splits(rc);
    SaaNet model(rc.model);
    const auto r = acceptance::train_and_evaluate(model, splits, rc.train);
    std::ofstream(out, std::ios::binary) << r.eval.metrics.to_json();
    std::ifstream in(out, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

acceptance::Outcome run() {
    const std::string a = pipeline("determinism_a.json");
    const std::string b = pipeline("determinism_b.json");
    std::ostringstream os;
    os << "two " << kEpochs << "-epoch runs, " << a.size() << " and " << b.size() << " bytes, "
       << (a == b ? "identical" : "DIFFERENT") << ": ";
    for (char ch : a)
        if (ch != '\n' && ch != ' ') os << ch;
    return {!a.empty() && a == b, os.str()};
}

const acceptance::Register reg("determinism", "identical seed and config give byte-identical metrics JSON", run);

}  // namespace
