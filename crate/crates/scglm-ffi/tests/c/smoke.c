#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include "scglm.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,    \
                    #cond, scglm_last_error());                        \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    ScglmPrior *prior = NULL;
    ScglmBase *base = NULL;
    ScglmChannel pr = {SCGLM_CHANNEL_KIND_PHASE_RETRIEVAL, 0.0};
    double mse = 0.0;
    size_t iters = 0, rows = 0, cols = 0;

    CHECK(scglm_prior_two_point(0.6, &prior) == SCGLM_STATUS_OK);
    CHECK(scglm_base_omega_lambda(6, 40, &base) == SCGLM_STATUS_OK);
    CHECK(scglm_base_shape(base, &rows, &cols) == SCGLM_STATUS_OK);
    CHECK(rows == 45 && cols == 40);

    CHECK(scglm_se_run(base, prior, pr, 0.75, 1e-9, 2000, &mse, &iters) == SCGLM_STATUS_OK);
    CHECK(mse < 0.05);

    CHECK(scglm_prior_two_point(1.5, NULL) == SCGLM_STATUS_NULL_POINTER);
    ScglmPrior *bad = NULL;
    CHECK(scglm_prior_two_point(1.5, &bad) == SCGLM_STATUS_INVALID_ARGUMENT);
    CHECK(bad == NULL);
    CHECK(strlen(scglm_last_error()) > 0);

    scglm_base_free(base);
    scglm_prior_free(prior);
    printf("ok %s\n", scglm_version());
    return 0;
}
