#ifndef PIML_AERO_H
#define PIML_AERO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Number of flight-state inputs `(v, α, rpm_tip, rpm_hover, θ_star, θ_port, θ_elev)`.
 */
#define PA_INPUTS 7

/*
 Number of outputs `(C_L, C_D, C_l, C_m)`.
 */
#define PA_OUTPUTS 4

typedef enum PaStatus {
  PA_STATUS_OK = 0,
  PA_STATUS_NULL_POINTER = 1,
  PA_STATUS_INVALID_ARGUMENT = 2,
  PA_STATUS_IO = 3,
  PA_STATUS_PARSE = 4,
  PA_STATUS_NUMERICAL = 5,
  PA_STATUS_PANIC = 6,
} PaStatus;

typedef enum PaModelKind {
  PA_MODEL_KIND_LOW_FIDELITY = 0,
  PA_MODEL_KIND_PIML_A = 1,
  PA_MODEL_KIND_PIML_B = 2,
  PA_MODEL_KIND_PURE_ANN = 3,
} PaModelKind;

/*
 Opaque model handle.
 */
typedef struct PaModel PaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Creates the low-fidelity model on the default aircraft.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum PaStatus pa_model_new_low_fidelity(struct PaModel **out);

/*
 Loads a trained checkpoint written by the `train` command.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer to
 writable storage for one handle.
 */
enum PaStatus pa_model_load_checkpoint(const char *path, struct PaModel **out);

/*
 Predicts `(C_L, C_D, C_l, C_m)` for `n` flight states stored row by row
 in `inputs` (`n × PA_INPUTS`), writing `n × PA_OUTPUTS` values to `outputs`.

 # Safety
 `model` must be a live handle; `inputs` and `outputs` must hold `n` rows.
 */
enum PaStatus pa_model_predict(const struct PaModel *model,
                               const double *inputs,
                               size_t n,
                               double *outputs);

/*
 Row-major `PA_OUTPUTS × PA_INPUTS` Jacobian of the low-fidelity pipeline
 of the model's aircraft at one flight state.

 # Safety
 `model` must be a live handle; `inputs` must hold `PA_INPUTS` doubles and
 `jacobian` room for `PA_OUTPUTS · PA_INPUTS`.
 */
enum PaStatus pa_low_fidelity_jacobian(const struct PaModel *model,
                                       const double *inputs,
                                       double *jacobian);

/*
 Writes the model kind to `kind`.

 # Safety
 `model` must be a live handle and `kind` a valid pointer.
 */
enum PaStatus pa_model_kind(const struct PaModel *model, enum PaModelKind *kind);

/*
 Releases a handle. Null is a no-op.

 # Safety
 `model` must be null or a handle not yet freed.
 */
void pa_model_free(struct PaModel *model);

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next call on the same thread.
 */
const char *pa_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIML_AERO_H */
