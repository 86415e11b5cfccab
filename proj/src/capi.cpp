#include "dkp/dkp.h"

#include <functional>
#include <string>

#include "dkp/commands.hpp"

struct dkp_session {
  dkp::cmd::KeyValues keys;
  std::string output;
  std::string error;
};

namespace {

int run_guarded(dkp_session* s, const std::function<void()>& fn) {
  if (!s) return 2;
  s->error.clear();
  try {
    fn();
    return 0;
  } catch (const dkp::ConfigError& e) {
    s->error = e.what();
    return 2;
  } catch (const dkp::IoError& e) {
    s->error = e.what();
    return 4;
  } catch (const std::exception& e) {  // numeric, shape, domain, decomposition
    s->error = e.what();
    return 3;
  }
}

}  // namespace

extern "C" {

dkp_session* dkp_session_new(void) { return new dkp_session(); }

void dkp_session_free(dkp_session* s) { delete s; }

int dkp_session_set(dkp_session* s, const char* key, const char* value) {
  return run_guarded(s, [&] {
    if (!key || !value) throw dkp::ConfigError("set: key and value must be non-null");
    s->keys[key] = value;
  });
}

int dkp_session_load_config(dkp_session* s, const char* path) {
  return run_guarded(s, [&] {
    if (!path) throw dkp::ConfigError("load_config: path must be non-null");
    // File keys fill in; keys already set on the session take precedence.
    auto file_keys = dkp::cmd::load_config_file(path);
    for (const auto& [k, v] : file_keys) s->keys.emplace(k, v);
  });
}

int dkp_session_run(dkp_session* s, const char* command) {
  return run_guarded(s, [&] {
    if (!command) throw dkp::ConfigError("run: command must be non-null");
    dkp::cmd::RunConfig rc;
    rc.command = command;
    rc.keys = s->keys;
    s->output = dkp::cmd::run(rc);
  });
}

const char* dkp_session_output(const dkp_session* s) {
  return s ? s->output.c_str() : "";
}

const char* dkp_session_error(const dkp_session* s) {
  return s ? s->error.c_str() : "";
}

const char* dkp_version(void) { return dkp::cmd::kVersion; }

}  // extern "C"
