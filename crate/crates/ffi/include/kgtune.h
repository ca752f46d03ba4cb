#ifndef KGTUNE_H
#define KGTUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define KGT_OK 0

#define KGT_USAGE 1

#define KGT_BACKEND 2

#define KGT_DATA 3

#define KGT_NULL 4

#define KGT_PANIC 5

// A backend with its own evaluation cache.
typedef struct KgtBackend KgtBackend;

// A loaded knowledge base.
typedef struct KgtKb KgtKb;

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next `kgt_*` call on this thread.
const char *kgt_last_error_message(void);

// Frees a string returned by this library.
//
// # Safety
// `s` is null or was returned by a `kgt_*` function and not yet freed.
void kgt_string_free(char *s);

// Loads and validates a knowledge-base file.
//
// # Safety
// `path` is a nul-terminated string; `out` is writable.
int32_t kgt_kb_load(const char *path, struct KgtKb **out);

// # Safety
// `kb` is null or came from [`kgt_kb_load`] and was not yet freed.
void kgt_kb_free(struct KgtKb *kb);

// Number of program prototypes in the knowledge base.
//
// # Safety
// `kb` is a live handle; `out` is writable.
int32_t kgt_kb_num_prototypes(const struct KgtKb *kb, size_t *out);

// Opens a synthetic backend from a suite file. Programs are referenced by id.
//
// # Safety
// `suite_path` is a nul-terminated string; `out` is writable.
int32_t kgt_backend_synthetic_from_file(const char *suite_path, struct KgtBackend **out);

// Opens an LLVM backend with the default pass list. Programs are `.ll` paths.
//
// `opt_path` may be null to use `$KGTUNE_OPT` or `opt` from `PATH`.
//
// # Safety
// `opt_path` is null or a nul-terminated string; `out` is writable.
int32_t kgt_backend_llvm_new(const char *opt_path, uint64_t timeout_secs, struct KgtBackend **out);

// # Safety
// `backend` is null or came from a `kgt_backend_*` constructor and was not yet freed.
void kgt_backend_free(struct KgtBackend *backend);

// Instruction count of `program` after `sequence` (pass names separated by
// commas or whitespace; empty means no passes).
//
// # Safety
// `backend` is a live handle; strings are nul-terminated; `out_count` is writable.
int32_t kgt_evaluate(const struct KgtBackend *backend,
                     const char *program,
                     const char *sequence,
                     uint64_t *out_count);

// Baseline instruction count of `program`.
//
// # Safety
// `backend` is a live handle; `program` is nul-terminated; `out_count` is writable.
int32_t kgt_baseline(const struct KgtBackend *backend, const char *program, uint64_t *out_count);

// Tunes `program` and returns the JSON report in `out_report`; free it with [`kgt_string_free`].
//
// `ga_config_json` may be null for defaults; missing fields take defaults.
//
// # Safety
// Handles are live; strings are null (where allowed) or nul-terminated; `out_report` is writable.
int32_t kgt_tune(const struct KgtBackend *backend,
                 const struct KgtKb *kb,
                 const char *program,
                 const char *ga_config_json,
                 char **out_report);

// Percent reduction of `count` relative to `baseline`.
//
// # Safety
// `out` is writable.
int32_t kgt_fitness(uint64_t baseline, uint64_t count, double *out);

#endif  /* KGTUNE_H */
