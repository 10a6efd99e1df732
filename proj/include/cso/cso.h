#ifndef CSO_H
#define CSO_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CSO_API __attribute__((visibility("default")))
#else
#define CSO_API
#endif

/* Status codes. Values are stable. */
typedef enum cso_status {
  CSO_OK = 0,
  CSO_ERR_INVALID_ARGUMENT = 1,
  CSO_ERR_CONFIG = 2,
  CSO_ERR_MISSING_ARTIFACT = 3,
  CSO_ERR_SCHEMA_MISMATCH = 4,
  CSO_ERR_IO = 5,
  CSO_ERR_NETWORK = 6,
  CSO_ERR_TIMEOUT = 7,
  CSO_ERR_MALFORMED_RESPONSE = 8,
  CSO_ERR_NUMERIC = 9,
  CSO_ERR_REPLAY_DIVERGENCE = 10,
  CSO_ERR_INTERNAL = 11
} cso_status;

typedef struct cso_session cso_session;

CSO_API const char* cso_version(void);
CSO_API const char* cso_status_name(cso_status status);

/* Opens a session from a config file; NULL or "" uses the defaults.
   CSO_ENDPOINT and CSO_WORKERS are applied either way. */
CSO_API cso_status cso_session_open(const char* config_path, cso_session** out);

/* Overrides one dotted config key, e.g. ("selection.k", "5"). */
CSO_API cso_status cso_session_set(cso_session* session, const char* key, const char* value);

/* Runs a command. seed < 0 selects the first configured seed; kind may be
   NULL. */
CSO_API cso_status cso_session_run(cso_session* session, const char* command, int round, long long seed,
                                   const char* kind);

/* JSON summary of the last successful run, or "" before any. Owned by the
   session. */
CSO_API const char* cso_session_summary(const cso_session* session);

CSO_API void cso_session_close(cso_session* session);

/* Message and JSON error record of the last failure on this thread. */
CSO_API const char* cso_last_error(void);
CSO_API const char* cso_last_error_record(void);

#ifdef __cplusplus
}
#endif

#endif
