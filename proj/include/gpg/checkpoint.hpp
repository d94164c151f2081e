#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gpg/adam.hpp"
#include "gpg/errors.hpp"
#include "gpg/policy.hpp"

namespace gpg {

// Versioned binary checkpoint. Layout (all integers little-endian, doubles
// as IEEE-754 bit patterns in little-endian u64):
//
//   bytes 0..7   magic "GPGCKPT\0"
//   u32          format version (currently 1)
//   str          env id                     (str = u32 length + bytes)
//   str          algorithm
//   u8           head kind (0 categorical, 1 gaussian, 2 tabular softmax)
//   u8           one-hot input flag
//   i32          input dim
//   i32          action dim
//   i32vec       hidden sizes               (vec = u64 count + payload)
//   f64vec       policy parameters (theta)
//   f64vec, f64vec, i64   policy Adam m, v, step
//   u8           has value net
//   [if value]   u8 one-hot, i32 input dim, i32vec hidden, f64vec phi,
//                f64vec m, f64vec v, i64 step
//   i64          iteration
//   i64          env steps
//   u64          seed
struct CheckpointData {
  std::string env_id;
  std::string algorithm;
  PolicyArch arch;
  std::vector<double> theta;
  AdamState policy_opt;
  bool has_value = false;
  bool value_one_hot = false;
  int value_input_dim = 0;
  std::vector<int> value_hidden;
  std::vector<double> phi;
  AdamState value_opt;
  long iteration = 0;
  long env_steps = 0;
  std::uint64_t seed = 0;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'G', 'P', 'G', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  auto u = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(u >> (8 * i));
  write_bytes(out, bytes, sizeof(T));
}

inline void write_f64(std::ostream& out, double value) {
  write_le(out, std::bit_cast<std::uint64_t>(value));
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline void write_f64_vec(std::ostream& out, const std::vector<double>& v) {
  write_le(out, static_cast<std::uint64_t>(v.size()));
  for (double x : v) write_f64(out, x);
}

inline void write_i32_vec(std::ostream& out, const std::vector<int>& v) {
  write_le(out, static_cast<std::uint64_t>(v.size()));
  for (int x : v) write_le(out, static_cast<std::int32_t>(x));
}

inline void read_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  read_bytes(in, bytes, sizeof(T), what);
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  return static_cast<T>(u);
}

inline double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(in, what));
}

inline std::string read_string(std::istream& in, const char* what) {
  const auto n = read_le<std::uint32_t>(in, what);
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n, what);
  return s;
}

inline std::vector<double> read_f64_vec(std::istream& in, const char* what) {
  const auto n = read_le<std::uint64_t>(in, what);
  std::vector<double> v(n);
  for (auto& x : v) x = read_f64(in, what);
  return v;
}

inline std::vector<int> read_i32_vec(std::istream& in, const char* what) {
  const auto n = read_le<std::uint64_t>(in, what);
  std::vector<int> v(n);
  for (auto& x : v) x = read_le<std::int32_t>(in, what);
  return v;
}

inline void write_adam(std::ostream& out, const AdamState& s) {
  write_f64_vec(out, s.m);
  write_f64_vec(out, s.v);
  write_le(out, static_cast<std::int64_t>(s.step));
}

inline AdamState read_adam(std::istream& in) {
  AdamState s;
  s.m = read_f64_vec(in, "adam m");
  s.v = read_f64_vec(in, "adam v");
  s.step = static_cast<long>(read_le<std::int64_t>(in, "adam step"));
  return s;
}

}  // namespace detail

inline void save_checkpoint(const CheckpointData& data, const std::string& path) {
  using namespace detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  write_bytes(out, kCheckpointMagic, sizeof(kCheckpointMagic));
  write_le(out, kCheckpointVersion);
  write_string(out, data.env_id);
  write_string(out, data.algorithm);
  write_le(out, static_cast<std::uint8_t>(data.arch.head));
  write_le(out, static_cast<std::uint8_t>(data.arch.one_hot_input ? 1 : 0));
  write_le(out, static_cast<std::int32_t>(data.arch.input_dim));
  write_le(out, static_cast<std::int32_t>(data.arch.action_dim));
  write_i32_vec(out, data.arch.hidden);
  write_f64_vec(out, data.theta);
  write_adam(out, data.policy_opt);
  write_le(out, static_cast<std::uint8_t>(data.has_value ? 1 : 0));
  if (data.has_value) {
    write_le(out, static_cast<std::uint8_t>(data.value_one_hot ? 1 : 0));
    write_le(out, static_cast<std::int32_t>(data.value_input_dim));
    write_i32_vec(out, data.value_hidden);
    write_f64_vec(out, data.phi);
    write_adam(out, data.value_opt);
  }
  write_le(out, static_cast<std::int64_t>(data.iteration));
  write_le(out, static_cast<std::int64_t>(data.env_steps));
  write_le(out, data.seed);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": version " + std::to_string(version) +
                  " not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  CheckpointData data;
  data.env_id = read_string(in, "env id");
  data.algorithm = read_string(in, "algorithm");
  const auto head = read_le<std::uint8_t>(in, "head kind");
  if (head > 2) throw IoError("checkpoint " + path + ": bad head kind");
  data.arch.head = static_cast<HeadKind>(head);
  data.arch.one_hot_input = read_le<std::uint8_t>(in, "one-hot flag") != 0;
  data.arch.input_dim = read_le<std::int32_t>(in, "input dim");
  data.arch.action_dim = read_le<std::int32_t>(in, "action dim");
  data.arch.hidden = read_i32_vec(in, "hidden sizes");
  data.theta = read_f64_vec(in, "theta");
  data.policy_opt = read_adam(in);
  data.has_value = read_le<std::uint8_t>(in, "value flag") != 0;
  if (data.has_value) {
    data.value_one_hot = read_le<std::uint8_t>(in, "value one-hot") != 0;
    data.value_input_dim = read_le<std::int32_t>(in, "value input dim");
    data.value_hidden = read_i32_vec(in, "value hidden");
    data.phi = read_f64_vec(in, "phi");
    data.value_opt = read_adam(in);
  }
  data.iteration = static_cast<long>(read_le<std::int64_t>(in, "iteration"));
  data.env_steps = static_cast<long>(read_le<std::int64_t>(in, "env steps"));
  data.seed = read_le<std::uint64_t>(in, "seed");
  return data;
}

// Rebuilds the policy from checkpointed architecture + parameters.
inline PolicyModel policy_from_checkpoint(const CheckpointData& data) {
  PolicyModel model{PolicyArch{data.arch}};
  if (model.param_count() != data.theta.size())
    throw IoError("checkpoint: theta has " + std::to_string(data.theta.size()) +
                  " parameters, architecture needs " + std::to_string(model.param_count()));
  model.params() = data.theta;
  return model;
}

}  // namespace gpg
