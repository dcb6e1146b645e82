#include <math.h>
#include <stdio.h>
#include "forecast_sde.h"

int main(void) {
    FsdeParams *params = NULL;
    if (fsde_params_new(1.9, 0.05, 2, &params) != FSDE_STATUS_OK) return 1;
    double z = 0.0, v = 0.0;
    if (fsde_lamperti_forward(params, 0.1, 0.4, &z) != FSDE_STATUS_OK) return 2;
    if (fsde_lamperti_inverse(params, z, 0.4, &v) != FSDE_STATUS_OK) return 3;
    if (fabs(v - 0.1) > 1e-12) return 4;
    if (fsde_lamperti_forward(params, 0.9, 0.5, &z) != FSDE_STATUS_DOMAIN) return 5;
    if (fsde_last_error() == NULL) return 6;
    fsde_params_free(params);
    printf("ok %s\n", fsde_version());
    return 0;
}
