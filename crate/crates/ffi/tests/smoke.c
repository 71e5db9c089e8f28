#include <math.h>
#include <stdio.h>
#include "setpoint_oco.h"

int main(void) {
    SpoAlgorithm *alg = NULL;
    if (spo_algorithm_cogd(2, NULL, NULL, 0.1, 0.0, 0.0, &alg) != SPO_STATUS_OK) {
        fprintf(stderr, "%s\n", spo_last_error());
        return 1;
    }
    double signal[2];
    double response[2] = {1.0, 0.5};
    double loss = NAN;
    for (int t = 0; t < 50; t++) {
        spo_algorithm_play(alg, signal, 2);
        spo_algorithm_observe_full(alg, response, 2, 1.0, &loss);
    }
    spo_algorithm_free(alg);
    printf("%s %.6f\n", spo_version(), loss);
    return loss < 1e-3 ? 0 : 1;
}
