/* Synthesizes a box dataset, runs the pipeline and prints the planes.
 *
 *   cargo build -p planeopt-ffi --release
 *   cc crates/ffi/examples/run.c -Icrates/ffi/include \
 *      target/release/libplaneopt_ffi.a -lm -lpthread -ldl -o run
 *   ./run /tmp/po-box
 */
#include <stdio.h>
#include <string.h>

#include "planeopt.h"

static int check(PoStatus s, const char *what) {
    if (s != PO_OK) {
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, po_last_error());
        return 1;
    }
    return 0;
}

int main(int argc, char **argv) {
    const char *dir = argc > 1 ? argv[1] : "po-box";
    char path[4096];
    PoConfig *cfg = NULL;
    PoResult *res = NULL;
    PoCounts c;
    double plane[4];
    size_t i;

    if (check(po_synth_write("box", dir, 0.05, 0.002, 8, 320, 240), "synth"))
        return 1;
    snprintf(path, sizeof path, "%s/planeopt.cfg", dir);
    if (check(po_config_load(path, &cfg), "config"))
        return 1;
    if (check(po_run(cfg, &res), "run")) {
        po_config_free(cfg);
        return 1;
    }
    po_result_counts(res, &c);
    printf("planeopt %s: %zu -> %zu faces, %zu planes, %.1f s\n", po_version(), c.input_faces,
           c.result_faces, c.planes, c.total_seconds);
    for (i = 0; i < c.planes; i++) {
        po_result_plane(res, i, plane);
        printf("  %+.4f %+.4f %+.4f %+.4f\n", plane[0], plane[1], plane[2], plane[3]);
    }
    po_result_free(res);
    po_config_free(cfg);
    return 0;
}
