// SPDX-License-Identifier: Apache-2.0
//
// Sweep drivers: train and evaluate a grid of (axis value x model x seed) cells.
//
// Each cell lives in <out>/cells/<axis_value>-<model>-s<seed>-<config hash>
// and is skipped on rerun once its `done` marker exists. Completed cells append
// one row to sweep.csv; latent-gen cells also append their convergence curve to
// sweep_convergence.csv. sweep_summary.csv is rebuilt from sweep.csv.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dgae/config.hpp"

namespace dgae {

enum class SweepAxis { kLatentSize, kSpatialF, kDecoderScale, kEncoderScale, kDiscriminatorScale, kLatentGen };

SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);
std::vector<std::string> default_axis_values(SweepAxis a);
/// Model kinds trained at every point of the axis.
std::vector<ModelKind> axis_models(SweepAxis a);
/// Config lines that realize one axis value.
std::vector<std::string> axis_overrides(SweepAxis a, const std::string& value);

struct SweepSpec {
  SweepAxis axis = SweepAxis::kLatentSize;
  std::vector<std::string> values;  // empty = default_axis_values
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string base_text;  // config file contents
  std::string base_origin = "base config";
  std::vector<std::string> base_overrides;
};

struct SweepRow {
  std::string axis_value;
  std::string model;
  std::uint64_t seed = 0;
  std::string cell_hash;
  std::string status;  // "ok" or "failed: <reason>"
  double psnr = 0, ssim = 0, frechet = 0, tv = 0;
};

struct SweepConvergenceRow {
  std::string axis_value;
  std::uint64_t seed = 0;
  std::string cell_hash;
  std::int64_t step = 0;
  double frechet = 0;
  double latent_frechet = 0;
};

inline const char* kSweepCsvSchema = "dgae.sweep/1";
inline const char* kSweepCsvHeader = "axis,axis_value,model,seed,cell_hash,status,psnr,ssim,frechet,tv";
inline const char* kConvergenceCsvSchema = "dgae.convergence/1";
inline const char* kConvergenceCsvHeader = "axis_value,seed,cell_hash,step,frechet,latent_frechet";
inline const char* kSummaryCsvSchema = "dgae.sweep_summary/1";
inline const char* kSummaryCsvHeader = "axis_value,model,n_ok,n_failed,psnr_mean,ssim_mean,frechet_mean,tv_mean";

struct SweepResult {
  std::vector<SweepRow> rows;  // latest row per cell, in grid order
  std::vector<SweepConvergenceRow> convergence;
};

/// Runs (or resumes) the sweep. Failed cells are recorded with their status and
/// excluded from summary means.
SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& out,
                      const std::function<void(const std::string&)>& progress = {});

/// Reads sweep.csv / sweep_convergence.csv, keeping the latest row per cell.
SweepResult read_sweep(const std::filesystem::path& out);

}  // namespace dgae
