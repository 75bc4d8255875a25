/* C interface to the curriculum pipeline. All functions return a ccl_status;
 * on failure ccl_last_error() describes the problem (thread-local, valid
 * until the next call on the same thread). */
#ifndef CCL_CCL_H
#define CCL_CCL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CCL_API __declspec(dllexport)
#else
#define CCL_API __attribute__((visibility("default")))
#endif

typedef enum ccl_status {
  CCL_OK = 0,
  CCL_ERR_VALIDATION = 1,
  CCL_ERR_TRANSPORT = 2,
  CCL_ERR_NUMERIC = 3,
  CCL_ERR_IO = 4,
  CCL_ERR_INTEGRITY = 5,
  CCL_ERR_INTERNAL = 6
} ccl_status;

/* A loaded run configuration. */
typedef struct ccl_run ccl_run;

CCL_API const char* ccl_version(void);
CCL_API const char* ccl_last_error(void);

/* Loads a JSON config file. */
CCL_API ccl_status ccl_run_open(const char* config_path, ccl_run** out);
CCL_API void ccl_run_close(ccl_run* run);

/* Overrides one dotted config key, e.g. ("train.learning_rate", "20"). The
 * value is read as JSON when it parses and as a string otherwise. */
CCL_API ccl_status ccl_run_set(ccl_run* run, const char* key, const char* value);

/* Effective config as a JSON string; release with ccl_string_free. */
CCL_API ccl_status ccl_run_config_json(const ccl_run* run, char** json_out);

/* Pipeline steps. `requests_out` (may be NULL) receives the number of
 * generation requests issued; `summary_out` (may be NULL) a JSON summary to
 * be released with ccl_string_free. */
CCL_API ccl_status ccl_run_construct(ccl_run* run, uint64_t* requests_out, char** summary_out);
CCL_API ccl_status ccl_run_adapt(ccl_run* run, uint64_t* requests_out, char** summary_out);
/* method: "sft" | "grpo"; strategy: "ccl" | "uniform". */
CCL_API ccl_status ccl_run_train(ccl_run* run, const char* method, const char* strategy, char** summary_out);

/* Aggregates the logs in a run directory into report.json / report.txt.
 * `text_out` receives the human-readable table, `partial_out` 1 when some
 * run has not finished. */
CCL_API ccl_status ccl_report(const char* run_dir, char** text_out, int* partial_out);

/* Writes a corpus of modular-chain tasks as JSONL. */
CCL_API ccl_status ccl_gen_tasks(const char* out_path, uint64_t seed, size_t count, size_t k_min, size_t k_max,
                                 int modulus, const char* id_prefix);

CCL_API void ccl_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
