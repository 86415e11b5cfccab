/* C API for the deep inverse Wishart process library.
 *
 * Usage: create a session, set flat configuration keys (or load a JSON config
 * file; later set() calls override file keys), then run a command. On success
 * dkp_session_output() holds the command's summary; on failure
 * dkp_session_error() holds a message and the return value is the exit code
 * (2 = configuration error, 3 = numeric failure, 4 = I/O error).
 */
#ifndef DKP_H
#define DKP_H

#ifdef __cplusplus
extern "C" {
#endif

typedef struct dkp_session dkp_session;

dkp_session* dkp_session_new(void);
void dkp_session_free(dkp_session* s);

/* Returns 0 on success, an exit code otherwise. */
int dkp_session_set(dkp_session* s, const char* key, const char* value);
int dkp_session_load_config(dkp_session* s, const char* path);

/* command: "train", "evaluate", "sample-prior", "eigen-hist",
 * "complexity-probe". Returns 0 on success, 2/3/4 on failure. */
int dkp_session_run(dkp_session* s, const char* command);

/* Valid until the next call on the same session. */
const char* dkp_session_output(const dkp_session* s);
const char* dkp_session_error(const dkp_session* s);

const char* dkp_version(void);

#ifdef __cplusplus
}
#endif

#endif /* DKP_H */
