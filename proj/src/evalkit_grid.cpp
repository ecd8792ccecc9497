#include <cmath>
#include <sstream>

#include "causalab/evalkit.hpp"
#include "causalab/io.hpp"

namespace causalab::evalkit {

namespace {

struct Moments {
    double sum = 0.0;
    double sumsq = 0.0;
    int n = 0;

    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++n;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double sd() const {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, (sumsq - n * m * m) / (n - 1)));
    }
};

}  // namespace

AblationGrid ablation_grid(const train::ExperimentConfig& cfg,
                           const std::vector<uint64_t>& seeds,
                           const std::vector<std::string>& placements,
                           const std::vector<model::AttnVariant>& variants) {
    if (seeds.size() < 3) {
        throw std::invalid_argument("ablation_grid: needs at least 3 seeds");
    }
    if (placements.empty() || variants.empty()) {
        throw std::invalid_argument("ablation_grid: empty placement or variant list");
    }
    std::vector<train::Arm> arms;
    for (const std::string& placement : placements) {
        if (placement == "baseline") {
            train::Arm a = train::make_arm(placement, model::AttnVariant::shared_kv);
            arms.push_back(a);  // no variant applies
            continue;
        }
        for (model::AttnVariant v : variants) {
            train::Arm a = train::make_arm(placement, v);
            a.name = placement + "-" + model::attn_variant_name(v);
            arms.push_back(a);
        }
    }

    const train::ExperimentResult res = train::run_experiment(cfg, seeds, arms);

    AblationGrid grid;
    grid.runs = res.runs;
    for (const train::Arm& arm : arms) {
        AblationCell cell;
        const size_t dash = arm.name.find('-');
        cell.placement = dash == std::string::npos ? arm.name : arm.name.substr(0, dash);
        cell.variant = arm.name == "baseline" ? "-" : model::attn_variant_name(arm.variant);
        Moments chair_s, chair_i, recall, rnd, pop, adv, fy;
        for (const train::ArmRunResult& run : res.runs) {
            if (run.arm != arm.name) continue;
            ++cell.seeds_total;
            if (!run.ok) continue;
            ++cell.seeds_ok;
            chair_s.add(run.chair_s);
            chair_i.add(run.chair_i);
            recall.add(run.recall);
            rnd.add(run.pope_rnd);
            pop.add(run.pope_pop);
            adv.add(run.pope_adv);
            fy.add(run.partner_false_yes);
        }
        cell.chair_s_mean = chair_s.mean(); cell.chair_s_sd = chair_s.sd();
        cell.chair_i_mean = chair_i.mean(); cell.chair_i_sd = chair_i.sd();
        cell.recall_mean = recall.mean(); cell.recall_sd = recall.sd();
        cell.pope_rnd_mean = rnd.mean(); cell.pope_rnd_sd = rnd.sd();
        cell.pope_pop_mean = pop.mean(); cell.pope_pop_sd = pop.sd();
        cell.pope_adv_mean = adv.mean(); cell.pope_adv_sd = adv.sd();
        cell.partner_false_yes_mean = fy.mean(); cell.partner_false_yes_sd = fy.sd();
        grid.cells.push_back(cell);
    }

    std::ostringstream csv;
    csv << "placement,variant,seeds_ok,seeds_total,"
           "chair_s_mean,chair_s_sd,chair_i_mean,chair_i_sd,recall_mean,recall_sd,"
           "pope_rnd_mean,pope_rnd_sd,pope_pop_mean,pope_pop_sd,pope_adv_mean,pope_adv_sd,"
           "partner_false_yes_mean,partner_false_yes_sd\n";
    for (const AblationCell& c : grid.cells) {
        csv << c.placement << ',' << c.variant << ',' << c.seeds_ok << ',' << c.seeds_total << ','
            << c.chair_s_mean << ',' << c.chair_s_sd << ',' << c.chair_i_mean << ','
            << c.chair_i_sd << ',' << c.recall_mean << ',' << c.recall_sd << ','
            << c.pope_rnd_mean << ',' << c.pope_rnd_sd << ',' << c.pope_pop_mean << ','
            << c.pope_pop_sd << ',' << c.pope_adv_mean << ',' << c.pope_adv_sd << ','
            << c.partner_false_yes_mean << ',' << c.partner_false_yes_sd << '\n';
    }
    grid.grid_csv_path = cfg.out_dir / "ablation_grid.csv";
    io::write_file(grid.grid_csv_path, csv.str());
    grid.runs_csv_path = res.summary_csv_path;
    return grid;
}

}  // namespace causalab::evalkit
