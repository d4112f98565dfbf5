#include <stdio.h>
#include "jumpcons.h"

static const char *CONFIG =
    "{\"model\": {\"kind\": \"preset\", \"name\": \"vasicek\"}, \"state\": [0.03],"
    " \"numerics\": {\"n_paths\": 2000, \"dt\": 0.01}}";

int main(void) {
    JcSession *s = NULL;
    if (jc_session_new(CONFIG, &s) != JC_STATUS_OK) {
        char msg[256];
        jc_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    double x[1] = {0.03};
    double price = 0.0, mean = 0.0, se = 0.0, max_abs = 0.0;
    int consistent = 0;
    jc_bond_price(s, 5.0, x, jc_session_dim(s), &price);
    jc_mc_bond_price(s, x, 1, 5.0, 7, &mean, &se);
    jc_check(s, &max_abs, &consistent);
    printf("jumpcons %s: P = %.10f, MC = %.6f +- %.6f, consistent = %d\n", jc_version(), price, mean, se, consistent);
    jc_session_free(s);
    return 0;
}
