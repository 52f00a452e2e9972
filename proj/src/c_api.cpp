#include "rave/c_api.h"

#include <string>

#include "rave/bytes.hpp"
#include "rave/rvc.hpp"
#include "rave/tokens.hpp"

namespace {

thread_local std::string last_error;

template <typename F>
int guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return 0;
  } catch (const rave::Error& e) {
    last_error = e.what();
    return 1 + static_cast<int>(e.code());
  } catch (const std::exception& e) {
    last_error = e.what();
    return 1 + static_cast<int>(rave::Errc::IoError);
  }
}

void need_capacity(std::size_t have, std::size_t want) {
  if (have < want)
    rave::fail(rave::Errc::IndexOutOfRange,
               "buffer holds " + std::to_string(have) + " floats, need " + std::to_string(want));
}

}  // namespace

extern "C" {

int rave_rvc_info(const char* path, rave_volume_info* out) {
  return guarded([&] {
    const auto bytes = rave::read_file(path);
    const auto h = rave::rvc::read_header(bytes);
    *out = {};
    out->dims[0] = static_cast<uint32_t>(h.dims.x);
    out->dims[1] = static_cast<uint32_t>(h.dims.y);
    out->dims[2] = static_cast<uint32_t>(h.dims.z);
    for (int i = 0; i < 3; ++i) out->spacing[i] = h.spacing[i];
    for (int i = 0; i < 9; ++i) out->orientation[i] = h.orientation[i];
    if (h.metadata.contains("origin") && h.metadata["origin"].is_array() && h.metadata["origin"].size() == 3)
      for (int i = 0; i < 3; ++i) out->origin[i] = h.metadata["origin"][i].get<double>();
    out->dtype = static_cast<uint8_t>(h.dtype);
    out->codec = static_cast<uint8_t>(h.codec);
    out->flags = h.flags;
    auto mod = rave::parse_modality(h.metadata.value("modality", "other"));
    out->modality = static_cast<uint8_t>(mod.value_or(rave::Modality::Other));
  });
}

int rave_rvc_read(const char* path, float* dst, size_t capacity) {
  return guarded([&] {
    const auto v = rave::decode_rvc(rave::read_file(path));
    need_capacity(capacity, v.data.size());
    std::copy(v.data.begin(), v.data.end(), dst);
  });
}

int rave_rvc_read_slice(const char* path, uint32_t z, float* dst, size_t capacity) {
  return guarded([&] {
    const auto s = rave::random_access_slice(rave::read_file(path), z);
    need_capacity(capacity, s.size());
    std::copy(s.begin(), s.end(), dst);
  });
}

int rave_tgr_info(const char* path, rave_token_info* out) {
  return guarded([&] {
    const auto bytes = rave::read_file(path);
    const auto h = rave::tgr::decode_header(bytes);
    *out = {};
    out->channels = h.channels;
    out->grid[0] = static_cast<uint32_t>(h.grid.x);
    out->grid[1] = static_cast<uint32_t>(h.grid.y);
    out->grid[2] = static_cast<uint32_t>(h.grid.z);
    out->patch[0] = static_cast<uint32_t>(h.patch.x);
    out->patch[1] = static_cast<uint32_t>(h.patch.y);
    out->patch[2] = static_cast<uint32_t>(h.patch.z);
    out->modality = static_cast<uint8_t>(h.modality);
    out->token_count = h.token_count;
    out->value_count = h.payload_bytes / 4;
  });
}

int rave_tgr_read(const char* path, float* dst, size_t capacity) {
  return guarded([&] {
    const auto tg = rave::decode_tgr(rave::read_file(path));
    need_capacity(capacity, tg.values.size());
    std::copy(tg.values.begin(), tg.values.end(), dst);
  });
}

const char* rave_last_error(void) { return last_error.c_str(); }

const char* rave_status_name(int status) {
  if (status == 0) return "Ok";
  if (status < 1 || status > 1 + static_cast<int>(rave::Errc::IoError)) return "Unknown";
  return rave::errc_name(static_cast<rave::Errc>(status - 1)).data();
}

}  // extern "C"
