#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <system_error>

#include "metaci/dgp.hpp"

namespace metaci {

// Shortest round-trip decimal form; identical across platforms, unlike
// ostream formatting which is locale- and precision-sensitive.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

// Write to <path>.tmp then rename, so readers never observe a partial file.
inline void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write_file: cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("atomic_write_file: write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("atomic_write_file: rename to " + path + " failed");
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_file: cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

// Columns x1..xp,t,y and, when requested and present, mu0,mu1.
inline void write_dataset_csv(const Dataset& ds, const std::string& path,
                              bool include_ground_truth) {
  if (include_ground_truth && !ds.has_ground_truth()) {
    throw std::invalid_argument("write_dataset_csv: ground truth requested but absent");
  }
  std::string out;
  for (std::size_t j = 0; j < ds.p(); ++j) {
    if (j > 0) out += ',';
    out += "x" + std::to_string(j + 1);
  }
  out += ",t,y";
  if (include_ground_truth) out += ",mu0,mu1";
  out += '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < ds.p(); ++j) {
      if (j > 0) out += ',';
      out += format_double(ds.X(i, j));
    }
    out += ',';
    out += std::to_string(ds.t[i]);
    out += ',';
    out += format_double(ds.y[i]);
    if (include_ground_truth) {
      out += ',';
      out += format_double(ds.mu0[i]);
      out += ',';
      out += format_double(ds.mu1[i]);
    }
    out += '\n';
  }
  atomic_write_file(path, out);
}

}  // namespace metaci
