#pragma once

// Checkpoints: a text manifest (name, shape, dtype, byte offset) next to a
// single little-endian raw-float blob. The optimizer moments ride along
// under "optim.m." / "optim.v." prefixes so training resumes bit-exactly.

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "auxdepth/optim.hpp"
#include "auxdepth/params.hpp"

namespace auxdepth {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian raw floats");

namespace detail {

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

template <typename S>
void append_blob(std::ofstream& blob, const std::vector<S>& data) {
  blob.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(S)));
}

}  // namespace detail

/// Writes `<base>.manifest` and `<base>.blob`.
template <typename S>
void save_checkpoint(const std::string& base, const ParameterStore<S>& store,
                     Adam<S>* optimizer, std::int64_t step) {
  std::ofstream manifest(base + ".manifest");
  std::ofstream blob(base + ".blob", std::ios::binary);
  if (!manifest || !blob) fail(Error::Kind::Io, "cannot write checkpoint " + base);
  manifest << "AUXDEPTH-CKPT v1\n";
  manifest << "step " << step << "\n";
  std::uint64_t offset = 0;
  auto emit = [&](const std::string& name, const Shape& shape, const std::vector<S>& data) {
    manifest << "tensor " << name << " " << shape.size();
    for (Index d : shape) manifest << " " << d;
    manifest << " " << detail::dtype_name<S>() << " " << offset << "\n";
    detail::append_blob(blob, data);
    offset += data.size() * sizeof(S);
  };
  for (const auto& name : store.names()) {
    const Tensor<S>& t = store.at(name);
    emit(name, t.shape(), t.values());
  }
  if (optimizer) {
    for (const auto& name : store.names()) {
      const Tensor<S>& t = store.at(name);
      emit("optim.m." + name, t.shape(), optimizer->moment1(name));
      emit("optim.v." + name, t.shape(), optimizer->moment2(name));
    }
  }
}

/// Loads parameters (and, when present and requested, optimizer moments)
/// into an existing store. Returns the saved step count.
template <typename S>
std::int64_t load_checkpoint(const std::string& base, ParameterStore<S>& store,
                             Adam<S>* optimizer) {
  std::ifstream manifest(base + ".manifest");
  if (!manifest) fail(Error::Kind::Io, "cannot open checkpoint manifest " + base + ".manifest");
  std::ifstream blob(base + ".blob", std::ios::binary);
  if (!blob) fail(Error::Kind::Io, "cannot open checkpoint blob " + base + ".blob");
  std::string line;
  if (!std::getline(manifest, line) || line != "AUXDEPTH-CKPT v1")
    fail(Error::Kind::Parse, "checkpoint " + base + ": bad or missing version header");
  std::int64_t step = 0;
  {
    std::getline(manifest, line);
    std::istringstream ss(line);
    std::string key;
    ss >> key >> step;
    if (key != "step") fail(Error::Kind::Parse, "checkpoint " + base + ": missing step line");
  }
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag, name, dtype;
    std::size_t rank = 0;
    std::uint64_t offset = 0;
    ss >> tag >> name >> rank;
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) ss >> shape[i];
    ss >> dtype >> offset;
    if (tag != "tensor" || !ss)
      fail(Error::Kind::Parse, "checkpoint " + base + ": bad manifest line: " + line);
    if (dtype != detail::dtype_name<S>())
      fail(Error::Kind::Config, "checkpoint " + base + ": dtype " + dtype +
                                    " does not match this build (" +
                                    detail::dtype_name<S>() + ")");
    std::vector<S>* target = nullptr;
    Shape expect;
    if (name.rfind("optim.m.", 0) == 0) {
      if (!optimizer) continue;
      const std::string pname = name.substr(8);
      target = &optimizer->moment1(pname);
      expect = store.at(pname).shape();
    } else if (name.rfind("optim.v.", 0) == 0) {
      if (!optimizer) continue;
      const std::string pname = name.substr(8);
      target = &optimizer->moment2(pname);
      expect = store.at(pname).shape();
    } else {
      Tensor<S>& t = store.at(name);
      target = &t.values();
      expect = t.shape();
    }
    if (shape != expect)
      fail(Error::Kind::Config, "checkpoint " + base + ": tensor " + name + " has shape " +
                                    shape_str(shape) + ", expected " + shape_str(expect));
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(target->data()),
              static_cast<std::streamsize>(target->size() * sizeof(S)));
    if (!blob) fail(Error::Kind::Parse, "checkpoint " + base + ": truncated blob at " + name);
  }
  if (optimizer) optimizer->set_step_count(step);
  return step;
}

}  // namespace auxdepth
