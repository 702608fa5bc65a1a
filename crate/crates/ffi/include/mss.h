#ifndef MSS_H
#define MSS_H

#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum MssStatus {
  MSS_STATUS_OK = 0,
  MSS_STATUS_INVALID_ARGUMENT = 1,
  MSS_STATUS_INVALID_MODULI = 2,
  MSS_STATUS_SEARCH_EXHAUSTED = 3,
  MSS_STATUS_NO_DATA = 4,
  MSS_STATUS_MALFORMED_REPORT = 5,
  MSS_STATUS_DIMENSION_MISMATCH = 6,
  MSS_STATUS_RANK_DEFICIENT = 7,
  MSS_STATUS_CAPACITY = 8,
  MSS_STATUS_IO = 9,
  MSS_STATUS_NULL_POINTER = 10,
  MSS_STATUS_BUFFER_TOO_SMALL = 11,
  MSS_STATUS_INTERNAL = 12,
} MssStatus;

// Server-side report counts.
typedef struct MssAggregator MssAggregator;

// Client-side randomizer with its own random stream.
typedef struct MssEncoder MssEncoder;

// A validated moduli tuple with its domain size and privacy budget.
typedef struct MssModuli MssModuli;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message (NUL-terminated,
// truncated to `cap`) and returns the full message length in bytes.
//
// # Safety
// `buf` must be null or valid for `cap` bytes.
size_t mss_last_error(char *buf, size_t cap);

// Validates `moduli[0..ell]` for domain size `k` and budget `eps`.
//
// # Safety
// `moduli` must be valid for `ell` reads; `out_handle` must be writable.
enum MssStatus mss_moduli_new(const size_t *moduli,
                              size_t ell,
                              size_t k,
                              double eps,
                              struct MssModuli **out_handle);

// Searches for moduli with the default configuration and the given seed.
//
// # Safety
// `out_handle` must be writable.
enum MssStatus mss_moduli_choose(size_t k,
                                 double eps,
                                 uint64_t seed,
                                 struct MssModuli **out_handle);

// # Safety
// `h` must be null or a handle from `mss_moduli_new`/`mss_moduli_choose`
// that has not been freed.
void mss_moduli_free(struct MssModuli *h);

// Number of moduli.
//
// # Safety
// `h` must be a live handle; `ell` must be writable.
enum MssStatus mss_moduli_len(const struct MssModuli *h, size_t *ell);

// Copies the moduli into `buf`, which must hold `mss_moduli_len` entries.
//
// # Safety
// `h` must be a live handle; `buf` must be valid for `cap` writes.
enum MssStatus mss_moduli_get(const struct MssModuli *h, size_t *buf, size_t cap);

// Condition number of the weighted design under equal block counts.
//
// # Safety
// `h` must be a live handle; `kappa` must be writable.
enum MssStatus mss_moduli_kappa(const struct MssModuli *h, double *kappa);

// Average bits per report.
//
// # Safety
// `h` must be a live handle; `bits` must be writable.
enum MssStatus mss_moduli_bits(const struct MssModuli *h, double *bits);

// Expected single-report reconstruction rate for a uniform input.
//
// # Safety
// `h` must be a live handle; `rate` must be writable.
enum MssStatus mss_moduli_dra(const struct MssModuli *h, double *rate);

// Creates a randomizer for the moduli in `h` (copied) seeded with `seed`.
//
// # Safety
// `h` must be a live handle; `out_handle` must be writable.
enum MssStatus mss_encoder_new(const struct MssModuli *h,
                               uint64_t seed,
                               struct MssEncoder **out_handle);

// # Safety
// `h` must be null or a live encoder handle.
void mss_encoder_free(struct MssEncoder *h);

// Perturbs `x`. Writes the block index to `j` and the sorted subset to
// `z[0..*z_len]`; `z_cap` must be at least the largest block's subset size.
//
// # Safety
// `h` must be a live encoder; `j` and `z_len` writable; `z` valid for
// `z_cap` writes.
enum MssStatus mss_encoder_perturb(struct MssEncoder *h,
                                   size_t x,
                                   size_t *j,
                                   uint32_t *z,
                                   size_t z_cap,
                                   size_t *z_len);

// Creates an empty aggregator for the moduli in `h` (copied).
//
// # Safety
// `h` must be a live handle; `out_handle` must be writable.
enum MssStatus mss_aggregator_new(const struct MssModuli *h, struct MssAggregator **out_handle);

// # Safety
// `h` must be null or a live aggregator handle.
void mss_aggregator_free(struct MssAggregator *h);

// Validates and counts one report.
//
// # Safety
// `h` must be a live aggregator; `z` valid for `z_len` reads.
enum MssStatus mss_aggregator_add(struct MssAggregator *h,
                                  size_t j,
                                  const uint32_t *z,
                                  size_t z_len);

// Number of reports counted so far.
//
// # Safety
// `h` must be a live aggregator; `n` writable.
enum MssStatus mss_aggregator_count(const struct MssAggregator *h, uint64_t *n);

// Estimates the histogram into `f[0..k]`. `lambda < 0` selects `1/ε²`.
//
// # Safety
// `h` must be a live aggregator; `f` valid for `k` writes.
enum MssStatus mss_aggregator_decode(const struct MssAggregator *h,
                                     double lambda,
                                     double *f,
                                     size_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSS_H */
