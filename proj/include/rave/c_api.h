#ifndef RAVE_C_API_H
#define RAVE_C_API_H

/* C ABI over the container readers, for language bindings.
 *
 * Every function returns 0 on success or a nonzero status. The status is
 * 1 + the library error code; rave_status_name() names it and
 * rave_last_error() holds the message for the calling thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct rave_volume_info {
  uint32_t dims[3]; /* x, y, z; x varies fastest in the data buffer */
  float spacing[3];
  float orientation[9]; /* column-major direction cosines */
  double origin[3];
  uint8_t dtype; /* 0 int16, 1 uint16, 2 float32: storage type in the file */
  uint8_t codec;
  uint16_t flags;
  uint8_t modality;
} rave_volume_info;

typedef struct rave_token_info {
  uint32_t channels;
  uint32_t grid[3];
  uint32_t patch[3];
  uint8_t modality;
  uint64_t token_count;
  uint64_t value_count; /* channels * tokens * patch voxels */
} rave_token_info;

int rave_rvc_info(const char* path, rave_volume_info* out);
/* Decodes into `dst` (dims product floats); `capacity` is in floats. */
int rave_rvc_read(const char* path, float* dst, size_t capacity);
/* One slice z (dims[0] * dims[1] floats). */
int rave_rvc_read_slice(const char* path, uint32_t z, float* dst, size_t capacity);

int rave_tgr_info(const char* path, rave_token_info* out);
/* Floats ordered [channel][token][patch voxel], tokens z-slowest. */
int rave_tgr_read(const char* path, float* dst, size_t capacity);

const char* rave_last_error(void);
const char* rave_status_name(int status);

#ifdef __cplusplus
}
#endif

#endif
