#include <math.h>
#include <stdio.h>
#include <string.h>

#include "jflow.h"

#define CHECK(expr)                                                            \
  do {                                                                         \
    if (!(expr)) {                                                             \
      const char *msg = jflow_last_error_message();                            \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #expr,           \
              msg ? msg : "no message");                                       \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  JflowBackend *b = NULL;
  CHECK(jflow_backend_sphere(128, 12.0, &b) == JFLOW_STATUS_OK);
  CHECK(jflow_backend_len(b) == 128 && jflow_backend_dim(b) == 1);

  JflowPotential *phi = NULL;
  CHECK(jflow_potential_from_expr(b, "moment_cos(0.1, 1)", &phi) == JFLOW_STATUS_OK);

  JflowFunctionals f;
  CHECK(jflow_functionals(b, phi, 1.0, 0, &f) == JFLOW_STATUS_OK);
  CHECK(f.j > 0.0 && f.entropy >= 0.0 && fabs(f.c - 1.0) < 1e-9);

  JflowFlowOptions opts = jflow_flow_options_default();
  opts.t_max = 1.0;
  opts.residual_target = 1e-12;
  JflowFlowResult *run = NULL;
  CHECK(jflow_flow_run(b, phi, 1.0, &opts, &run) == JFLOW_STATUS_OK);
  JflowFlowSummary s;
  CHECK(jflow_flow_result_summary(run, &s) == JFLOW_STATUS_OK);
  CHECK(s.status == JFLOW_FLOW_STATUS_NON_CONVERGENCE && s.t >= 1.0 && s.steps > 0);

  JflowPotential *bad = NULL;
  CHECK(jflow_potential_from_expr(b, "nonsense(", &bad) == JFLOW_STATUS_CONFIG);
  CHECK(bad == NULL && jflow_last_error_message() != NULL);
  CHECK(jflow_functionals(NULL, phi, 1.0, 0, &f) == JFLOW_STATUS_NULL_POINTER);

  jflow_flow_result_free(run);
  jflow_potential_free(phi);
  jflow_backend_free(b);
  printf("jflow %s ok\n", jflow_version());
  return 0;
}
