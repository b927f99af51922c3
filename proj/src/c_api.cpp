#include "ebmm.h"

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "ebmm/errors.hpp"
#include "ebmm/runner.hpp"

struct ebmm_session {
  std::string config_path;
  ebmm::RunnerOptions options;
  std::string last_error;
};

namespace {

template <typename Fn>
int guarded(ebmm_session* s, Fn&& fn) {
  if (!s) return EBMM_INTERNAL;
  s->last_error.clear();
  try {
    fn();
    return EBMM_OK;
  } catch (const ebmm::ConfigError& e) {
    s->last_error = e.what();
    return EBMM_CONFIG;
  } catch (const ebmm::ParseError& e) {
    s->last_error = e.what();
    return EBMM_IO;
  } catch (const ebmm::IoError& e) {
    s->last_error = e.what();
    return EBMM_IO;
  } catch (const ebmm::DivergenceError& e) {
    s->last_error = e.what();
    return EBMM_DIVERGED;
  } catch (const ebmm::ArtifactError& e) {
    s->last_error = e.what();
    return EBMM_ARTIFACT;
  } catch (const std::exception& e) {
    s->last_error = e.what();
    return EBMM_INTERNAL;
  } catch (...) {
    s->last_error = "unknown failure";
    return EBMM_INTERNAL;
  }
}

/* "x.json" / "x.bin" -> "x": callers may pass either sibling file. */
std::string checkpoint_stem(const char* checkpoint) {
  std::string stem(checkpoint);
  for (const char* ext : {".json", ".bin"}) {
    const std::size_t n = std::strlen(ext);
    if (stem.size() > n && stem.compare(stem.size() - n, n, ext) == 0) {
      stem.resize(stem.size() - n);
      break;
    }
  }
  return stem;
}

bool parse_bool(const char* value, bool& out) {
  if (!value) {
    out = true;
    return true;
  }
  const std::string v(value);
  if (v == "1" || v == "true" || v == "on") {
    out = true;
    return true;
  }
  if (v == "0" || v == "false" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

extern "C" {

ebmm_session* ebmm_open(const char* config_path) {
  if (!config_path) return nullptr;
  return new (std::nothrow) ebmm_session{config_path, {}, {}};
}

void ebmm_close(ebmm_session* session) { delete session; }

int ebmm_set_option(ebmm_session* session, const char* key,
                    const char* value) {
  if (!session) return EBMM_INTERNAL;
  session->last_error.clear();
  if (!key) {
    session->last_error = "option key is null";
    return EBMM_CONFIG;
  }
  const std::string k(key);
  if (k == "seed") {
    if (!value || !*value) {
      session->last_error = "option seed needs a value";
      return EBMM_CONFIG;
    }
    char* end = nullptr;
    errno = 0;
    const unsigned long long parsed = std::strtoull(value, &end, 10);
    if (errno != 0 || end == value || *end != '\0' ||
        std::strchr(value, '-') != nullptr) {
      session->last_error =
          std::string("option seed: not an unsigned integer: ") + value;
      return EBMM_CONFIG;
    }
    session->options.has_seed = true;
    session->options.seed = parsed;
  } else if (k == "out") {
    if (!value || !*value) {
      session->last_error = "option out needs a value";
      return EBMM_CONFIG;
    }
    session->options.out_dir = value;
  } else if (k == "freeze-energy") {
    if (!parse_bool(value, session->options.freeze_energy)) {
      session->last_error =
          std::string("option freeze-energy: not a boolean: ") + value;
      return EBMM_CONFIG;
    }
  } else if (k == "extension") {
    if (!parse_bool(value, session->options.extension)) {
      session->last_error =
          std::string("option extension: not a boolean: ") + value;
      return EBMM_CONFIG;
    }
  } else if (k == "resume") {
    if (!value || !*value) {
      session->last_error = "option resume needs a value";
      return EBMM_CONFIG;
    }
    session->options.resume = checkpoint_stem(value);
  } else {
    session->last_error = "unknown option " + k;
    return EBMM_CONFIG;
  }
  return EBMM_OK;
}

int ebmm_gen_data(ebmm_session* session) {
  return guarded(session, [&] {
    ebmm::run_gen_data(session->config_path, session->options);
  });
}

int ebmm_train(ebmm_session* session) {
  return guarded(session, [&] {
    ebmm::run_train(session->config_path, session->options);
  });
}

int ebmm_eval(ebmm_session* session, const char* checkpoint) {
  return guarded(session, [&] {
    if (!checkpoint || !*checkpoint)
      throw ebmm::ConfigError("eval needs a checkpoint path");
    ebmm::run_eval(session->config_path, checkpoint_stem(checkpoint),
                   session->options);
  });
}

int ebmm_ablate(ebmm_session* session) {
  return guarded(session, [&] {
    ebmm::run_ablate(session->config_path, session->options);
  });
}

int ebmm_chain_viz(ebmm_session* session, const char* checkpoint) {
  return guarded(session, [&] {
    if (!checkpoint || !*checkpoint)
      throw ebmm::ConfigError("chain-viz needs a checkpoint path");
    ebmm::run_chain_viz(session->config_path, checkpoint_stem(checkpoint),
                        session->options);
  });
}

const char* ebmm_last_error(const ebmm_session* session) {
  return session ? session->last_error.c_str() : "null session";
}

const char* ebmm_version(void) { return "1.0.0"; }

}  // extern "C"
