#ifndef EBMM_H
#define EBMM_H

/* C interface to the multimodal latent energy model toolkit. A session
 * carries a config file path plus command-line style overrides; each command
 * is synchronous and returns a stable result code. On any nonzero code the
 * session stores a human-readable message, fetched with ebmm_last_error. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define EBMM_API __declspec(dllexport)
#else
#define EBMM_API __attribute__((visibility("default")))
#endif

typedef struct ebmm_session ebmm_session;

/* Result codes; also the CLI process exit codes. */
enum {
  EBMM_OK = 0,
  EBMM_INTERNAL = 1, /* contract violation or unexpected failure */
  EBMM_CONFIG = 2,   /* malformed or invalid configuration */
  EBMM_IO = 3,       /* missing inputs, unwritable outputs, bad data files */
  EBMM_DIVERGED = 4, /* non-finite state during training or sampling */
  EBMM_ARTIFACT = 5  /* checkpoint inconsistent with the model or config */
};

/* Creates a session bound to a config file path. The file is read lazily by
 * each command, so a bad path surfaces as EBMM_IO there, not here. Returns
 * NULL only when config_path is NULL or allocation fails. */
EBMM_API ebmm_session* ebmm_open(const char* config_path);
EBMM_API void ebmm_close(ebmm_session* session);

/* Overrides, applied on top of the config by every subsequent command.
 * Keys: "seed" (unsigned decimal), "out" (directory), "freeze-energy" and
 * "extension" ("0"/"1", NULL means "1"), "resume" (checkpoint stem; only
 * ebmm_train reads it). Unknown keys or unparsable values: EBMM_CONFIG. */
EBMM_API int ebmm_set_option(ebmm_session* session, const char* key,
                             const char* value);

EBMM_API int ebmm_gen_data(ebmm_session* session);
EBMM_API int ebmm_train(ebmm_session* session);
/* checkpoint names the manifest/payload stem; a trailing ".json" or ".bin"
 * is tolerated and stripped. */
EBMM_API int ebmm_eval(ebmm_session* session, const char* checkpoint);
EBMM_API int ebmm_ablate(ebmm_session* session);
EBMM_API int ebmm_chain_viz(ebmm_session* session, const char* checkpoint);

/* Message for the most recent failing call; empty string after a success.
 * Owned by the session, valid until the next call on it. */
EBMM_API const char* ebmm_last_error(const ebmm_session* session);

EBMM_API const char* ebmm_version(void);

#ifdef __cplusplus
}
#endif

#endif /* EBMM_H */
