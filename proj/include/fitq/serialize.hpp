#pragma once

#include <filesystem>
#include <string>

#include "fitq/experiments.hpp"

namespace fitq {

inline constexpr int kSchemaVersion = 1;

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& s);

// base64 of the little-endian IEEE-754 bytes; bit-exact round trip
std::string encode_doubles(const std::vector<double>& v);
std::vector<double> decode_doubles(const std::string& s);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

// checkpoints ----------------------------------------------------------------
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

// reports --------------------------------------------------------------------
struct Provenance {
    // role -> {path, sha256}; embedded in every report for replayability
    std::vector<std::pair<std::string, std::filesystem::path>> inputs;
};

void save_trace_report(const TraceReport& rep, const std::filesystem::path& path, const Provenance& prov = {});
TraceReport load_trace_report(const std::filesystem::path& path);

void save_ranges(const Ranges& r, const std::filesystem::path& path, const Provenance& prov = {});
Ranges load_ranges(const std::filesystem::path& path);

void save_bitconfig(const BitConfig& b, const std::filesystem::path& path);
BitConfig load_bitconfig(const std::filesystem::path& path);

void save_fit_report(const FITReport& rep, const std::filesystem::path& path, const Provenance& prov = {});

void save_sweep_csv(const SweepOutput& sweep, const std::filesystem::path& path);
std::vector<SweepRow> load_sweep_csv(const std::filesystem::path& path);

void save_correlations(const std::vector<CorrelationRow>& rows, const std::filesystem::path& path,
                       const Provenance& prov = {});

void save_benchmark(const EstimatorBenchmark& b, const std::filesystem::path& path, const Provenance& prov = {});

void save_train_history_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path);

}  // namespace fitq
