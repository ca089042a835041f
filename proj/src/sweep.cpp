// SPDX-License-Identifier: Apache-2.0
#include "dgae/sweep.hpp"

#include <cmath>
#include <map>

#include "dgae/checkpoint.hpp"
#include "dgae/csv.hpp"
#include "dgae/evaluation.hpp"
#include "dgae/training.hpp"

namespace dgae {
namespace {

struct AxisInfo {
  SweepAxis axis;
  const char* name;
  std::vector<std::string> values;
  std::vector<ModelKind> models;
};

const std::vector<AxisInfo>& axes() {
  static const std::vector<AxisInfo> a = {
      {SweepAxis::kLatentSize, "latent-size", {"1", "2", "4"}, {ModelKind::kDgae, ModelKind::kBaselineVae}},
      {SweepAxis::kSpatialF, "spatial-f", {"f8c4", "f16c16", "f32c64"}, {ModelKind::kDgae, ModelKind::kBaselineVae}},
      {SweepAxis::kDecoderScale, "decoder-scale", {"B", "M", "L"}, {ModelKind::kDgae}},
      {SweepAxis::kEncoderScale, "encoder-scale", {"16", "32", "48"}, {ModelKind::kDgae}},
      {SweepAxis::kDiscriminatorScale, "discriminator-scale", {"S", "M", "L"}, {ModelKind::kBaselineVae}},
      {SweepAxis::kLatentGen, "latent-gen", {"4", "16"}, {ModelKind::kDgae}},
  };
  return a;
}

const AxisInfo& info(SweepAxis a) {
  for (const auto& i : axes())
    if (i.axis == a) return i;
  throw ConfigError("unknown sweep axis");
}

double cell_double(const std::string& s) {
  if (s.empty()) return std::nan("");
  return std::stod(s);
}

std::string csv_safe(std::string msg) {
  for (char& ch : msg)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ' ';
  return msg;
}

std::string metric(double v) { return std::isfinite(v) ? csv_number(v) : ""; }

void write_summary(const std::filesystem::path& out, const std::vector<SweepRow>& rows) {
  struct Acc {
    int ok = 0, failed = 0;
    double psnr = 0, ssim = 0, frechet = 0, tv = 0;
    int tv_n = 0;
  };
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const SweepRow& r : rows) {
    const auto key = std::make_pair(r.axis_value, r.model);
    if (!acc.count(key)) order.push_back(key);
    Acc& a = acc[key];
    if (r.status != "ok") {
      ++a.failed;
      continue;
    }
    ++a.ok;
    a.psnr += r.psnr;
    a.ssim += r.ssim;
    a.frechet += r.frechet;
    if (std::isfinite(r.tv)) {
      a.tv += r.tv;
      ++a.tv_n;
    }
  }
  std::string text = std::string("# schema: ") + kSummaryCsvSchema + "\n" + kSummaryCsvHeader + "\n";
  for (const auto& key : order) {
    const Acc& a = acc[key];
    const double n = a.ok;
    text += key.first + "," + key.second + "," + std::to_string(a.ok) + "," + std::to_string(a.failed) + "," +
            (a.ok ? csv_number(a.psnr / n) + "," + csv_number(a.ssim / n) + "," + csv_number(a.frechet / n) : ",,") +
            "," + (a.tv_n ? csv_number(a.tv / a.tv_n) : "") + "\n";
  }
  write_file_atomic(out / "sweep_summary.csv", text);
}

}  // namespace

SweepAxis parse_sweep_axis(const std::string& s) {
  for (const auto& i : axes())
    if (s == i.name) return i.axis;
  throw ConfigError("unknown sweep axis '" + s +
                    "' (expected latent-size, spatial-f, decoder-scale, encoder-scale, discriminator-scale, latent-gen)");
}

std::string to_string(SweepAxis a) { return info(a).name; }
std::vector<std::string> default_axis_values(SweepAxis a) { return info(a).values; }
std::vector<ModelKind> axis_models(SweepAxis a) { return info(a).models; }

std::vector<std::string> axis_overrides(SweepAxis a, const std::string& value) {
  switch (a) {
    case SweepAxis::kLatentSize:
    case SweepAxis::kLatentGen: return {"encoder.c=" + value};
    case SweepAxis::kSpatialF: return {"latent=" + value};
    case SweepAxis::kDecoderScale: return {"decoder.preset=" + value};
    case SweepAxis::kEncoderScale: return {"encoder.base=" + value};
    case SweepAxis::kDiscriminatorScale: return {"disc.scale=" + value};
  }
  throw ConfigError("unknown sweep axis");
}

SweepResult read_sweep(const std::filesystem::path& out) {
  SweepResult res;
  if (std::filesystem::exists(out / "sweep.csv")) {
    const CsvTable t = csv_read(out / "sweep.csv", kSweepCsvSchema);
    std::map<std::string, std::size_t> latest;
    for (const auto& r : t.rows) {
      if (r.size() < 10) throw IoError("sweep.csv: short row");
      SweepRow row{r[1], r[2], std::stoull(r[3]), r[4], r[5],
                   cell_double(r[6]), cell_double(r[7]), cell_double(r[8]), cell_double(r[9])};
      const std::string key = row.axis_value + "|" + row.model + "|" + r[3];
      if (latest.count(key))
        res.rows[latest[key]] = row;
      else {
        latest[key] = res.rows.size();
        res.rows.push_back(row);
      }
    }
  }
  if (std::filesystem::exists(out / "sweep_convergence.csv")) {
    const CsvTable t = csv_read(out / "sweep_convergence.csv", kConvergenceCsvSchema);
    for (const auto& r : t.rows)
      res.convergence.push_back({r[0], std::stoull(r[1]), r[2], std::stoll(r[3]), std::stod(r[4]), std::stod(r[5])});
  }
  return res;
}

SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& out,
                      const std::function<void(const std::string&)>& progress) {
  const auto values = spec.values.empty() ? default_axis_values(spec.axis) : spec.values;
  const std::string axis = to_string(spec.axis);
  std::filesystem::create_directories(out);
  csv_ensure(out / "sweep.csv", kSweepCsvSchema, kSweepCsvHeader);
  if (spec.axis == SweepAxis::kLatentGen)
    csv_ensure(out / "sweep_convergence.csv", kConvergenceCsvSchema, kConvergenceCsvHeader);

  for (const std::string& value : values)
    for (ModelKind model : axis_models(spec.axis))
      for (std::uint64_t seed : spec.seeds) {
        std::vector<std::string> ov = spec.base_overrides;
        for (auto& o : axis_overrides(spec.axis, value)) ov.push_back(o);
        ov.push_back("run.kind=" + to_string(model));
        ov.push_back("seed.global=" + std::to_string(seed));
        SweepRow row;
        row.axis_value = value;
        row.model = to_string(model);
        row.seed = seed;
        RunConfig cfg;
        try {
          cfg = parse_config_text(spec.base_text, spec.base_origin, ov);
        } catch (const ConfigError& e) {
          csv_append(out / "sweep.csv", axis + "," + value + "," + row.model + "," + std::to_string(seed) + ",," +
                                            "failed: " + csv_safe(e.what()) + ",,,,");
          continue;
        }
        row.cell_hash = cfg.hash();
        const auto dir = out / "cells" / (value + "-" + row.model + "-s" + std::to_string(seed) + "-" + row.cell_hash);
        if (std::filesystem::exists(dir / "done")) {
          if (progress) progress("skip " + dir.filename().string() + " (done)");
          continue;
        }
        if (progress) progress("run " + dir.filename().string());
        std::vector<SweepConvergenceRow> conv;
        try {
          const TrainResult tr = train_run(cfg, dir);
          const Autoencoder ae = load_autoencoder(load_checkpoint(tr.checkpoint));
          const EvalReport rep = evaluate_reconstruction(ae, cfg);
          write_file_atomic(dir / "eval.txt", rep.to_text());
          row.psnr = rep.psnr_mean;
          row.ssim = rep.ssim_mean;
          row.frechet = rep.frechet_distance;
          row.tv = rep.latent_tv;
          if (spec.axis == SweepAxis::kLatentGen) {
            const Dataset data = generate_procedural_dataset(cfg.dataset);
            const auto ref = held_out_images(cfg, eval_subset(cfg.eval_seed, cfg.eval.pool, cfg.eval.num_images));
            const LatentGenResult lg = train_latent_generator(ae, data, ref, [&](const ConvergencePoint& p) {
              if (progress) progress("  latent-gen step " + std::to_string(p.step) + " frechet " + csv_number(p.frechet));
            });
            for (const auto& p : lg.curve) conv.push_back({value, seed, row.cell_hash, p.step, p.frechet, p.latent_frechet});
          }
          row.status = "ok";
        } catch (const Error& e) {
          row.status = "failed: " + csv_safe(e.what());
        }
        for (const auto& c : conv)
          csv_append(out / "sweep_convergence.csv", c.axis_value + "," + std::to_string(c.seed) + "," + c.cell_hash + "," +
                                                        std::to_string(c.step) + "," + csv_number(c.frechet) + "," +
                                                        csv_number(c.latent_frechet));
        csv_append(out / "sweep.csv", axis + "," + value + "," + row.model + "," + std::to_string(seed) + "," +
                                          row.cell_hash + "," + row.status + "," + metric(row.psnr) + "," +
                                          metric(row.ssim) + "," + metric(row.frechet) + "," + metric(row.tv));
        if (row.status == "ok") write_file_atomic(dir / "done", row.cell_hash + "\n");
      }

  SweepResult res = read_sweep(out);
  write_summary(out, res.rows);
  return res;
}

}  // namespace dgae
