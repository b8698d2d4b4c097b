// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/binary_io.hpp"
#include "kernelscope/nn/network.hpp"
#include "kernelscope/nn/training.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace kernelscope::nn {

// KSNET: magic "KSNET\0", u32 version, u64 |theta|, f64 theta, u32 layer
// count, (u32 fan_in, u32 fan_out) per layer, u8 activation, u8 shortcut
// flag, f64 slope. Parameters are always stored as 64-bit floats.
inline constexpr std::string_view kNetworkMagic{"KSNET\0", 6};
inline constexpr std::uint32_t kNetworkVersion = 1;

template <std::floating_point Scalar>
std::string encode_network(const BasicNetwork<Scalar>& net) {
  io::ByteWriter w;
  w.bytes(kNetworkMagic);
  w.put<std::uint32_t>(kNetworkVersion);
  w.put<std::uint64_t>(net.num_params());
  for (Eigen::Index i = 0; i < net.params().size(); ++i) w.put<double>(double(net.params()[i]));
  const Topology& topo = net.topology();
  w.put<std::uint32_t>(std::uint32_t(topo.layers.size()));
  for (const auto& l : topo.layers) {
    w.put<std::uint32_t>(l.fan_in);
    w.put<std::uint32_t>(l.fan_out);
  }
  w.put<std::uint8_t>(static_cast<std::uint8_t>(topo.activation.kind));
  w.put<std::uint8_t>(topo.shortcuts ? 1 : 0);
  w.put<double>(topo.activation.slope);
  return w.data();
}

inline Network decode_network(io::ByteReader& r) {
  if (r.bytes(kNetworkMagic.size()) != kNetworkMagic) throw Error("format", r.source() + ": not a KSNET file");
  const auto version = r.get<std::uint32_t>();
  if (version != kNetworkVersion)
    throw Error("format", r.source() + ": unsupported KSNET version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / 8) throw Error("format", r.source() + ": truncated parameters");
  Vector theta(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = r.get<double>();
  Topology topo;
  const auto layers = r.get<std::uint32_t>();
  if (layers > r.remaining() / 8) throw Error("format", r.source() + ": truncated topology");
  for (std::uint32_t l = 0; l < layers; ++l) {
    LayerShape shape;
    shape.fan_in = r.get<std::uint32_t>();
    shape.fan_out = r.get<std::uint32_t>();
    topo.layers.push_back(shape);
  }
  const auto code = r.get<std::uint8_t>();
  if (code > 2) throw Error("format", r.source() + ": unknown activation code " + std::to_string(code));
  topo.activation.kind = static_cast<ActivationKind>(code);
  topo.shortcuts = r.get<std::uint8_t>() != 0;
  topo.activation.slope = r.get<double>();
  if (!r.done()) throw Error("format", r.source() + ": trailing bytes after network");
  return Network(std::move(topo), std::move(theta));
}

template <std::floating_point Scalar>
void write_network(const io::fs::path& path, const BasicNetwork<Scalar>& net) {
  io::write_file_atomic(path, encode_network(net));
}

inline Network read_network(const io::fs::path& path) {
  io::ByteReader r(io::read_file(path), path.string());
  return decode_network(r);
}

inline constexpr std::string_view kTraceHeader = "t,delta,loss,residual_norm,checkpoint_id";

inline std::string encode_trace_csv(const std::vector<TraceRecord>& records) {
  std::string out(kTraceHeader);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.t) + ',' + format_double(r.delta) + ',' + format_double(r.loss) + ',' +
           format_double(r.residual_norm) + ',';
    if (r.checkpoint_id) out += std::to_string(*r.checkpoint_id);
    out += '\n';
  }
  return out;
}

inline std::vector<TraceRecord> parse_trace_csv(const std::string& text, const std::string& source = "trace") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw Error("format", source + ": bad trace header");
  std::vector<TraceRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() == 4 && line.back() == ',') fields.emplace_back();
    if (fields.size() != 5) throw Error("format", source + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      TraceRecord r;
      r.t = std::stoull(fields[0]);
      r.delta = std::stod(fields[1]);
      r.loss = std::stod(fields[2]);
      r.residual_norm = std::stod(fields[3]);
      if (!fields[4].empty()) r.checkpoint_id = std::stoull(fields[4]);
      if (!records.empty() && r.t <= records.back().t)
        throw Error("format", source + ":" + std::to_string(lineno) + ": record times must increase");
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw Error("format", source + ":" + std::to_string(lineno) + ": unparsable number");
    }
  }
  return records;
}

}  // namespace kernelscope::nn
