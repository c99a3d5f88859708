/* Minimal C consumer of the crowdbp ABI.
 *
 * Build (after `cargo build -p crowdbp-ffi`):
 *   cc -I crates/ffi/include crates/ffi/examples/smoke.c \
 *      target/debug/libcrowdbp_ffi.a -lpthread -ldl -lm -o smoke
 */
#include "crowdbp.h"
#include <stdio.h>
#include <stdlib.h>

int main(void) {
    size_t tasks[] = {0, 1, 2, 0, 2};
    size_t workers[] = {0, 0, 0, 1, 1};
    size_t labels[] = {0, 1, 0, 0, 1};
    CbpDataset *ds = NULL;
    CbpResult *res = NULL;
    CbpConfig cfg;
    if (cbp_config_default(&cfg) != CBP_OK) return 1;
    if (cbp_dataset_from_answers(3, 2, 2, 5, tasks, workers, labels, &ds) != CBP_OK) return 2;
    if (cbp_run(ds, &cfg, &res) != CBP_OK) {
        char msg[256];
        cbp_last_error_message(msg, sizeof msg);
        fprintf(stderr, "run failed: %s\n", msg);
        return 3;
    }
    size_t n = cbp_result_num_tasks(res), k = cbp_result_num_classes(res);
    double *q = malloc(n * k * sizeof(double));
    if (cbp_result_posterior(res, q, n * k) != CBP_OK) return 4;
    for (size_t i = 0; i < n; i++) {
        printf("task %zu:", i);
        for (size_t z = 0; z < k; z++) printf(" %.4f", q[i * k + z]);
        printf("\n");
    }
    free(q);
    cbp_result_free(res);
    cbp_dataset_free(ds);
    return 0;
}
