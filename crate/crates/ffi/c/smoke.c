#include <stdio.h>
#include "kgtune.h"

int main(int argc, char **argv) {
    if (argc < 4) {
        fprintf(stderr, "usage: %s <suite.json> <kb.json> <program-id>\n", argv[0]);
        return 1;
    }
    KgtBackend *backend = NULL;
    KgtKb *kb = NULL;
    char *report = NULL;
    uint64_t count = 0;
    int rc = kgt_backend_synthetic_from_file(argv[1], &backend);
    if (rc == KGT_OK)
        rc = kgt_kb_load(argv[2], &kb);
    if (rc == KGT_OK)
        rc = kgt_baseline(backend, argv[3], &count);
    if (rc == KGT_OK)
        rc = kgt_tune(backend, kb, argv[3], "{\"eval_budget\": 100}", &report);
    if (rc != KGT_OK) {
        fprintf(stderr, "error %d: %s\n", rc, kgt_last_error_message());
    } else {
        printf("baseline %llu\n%s\n", (unsigned long long)count, report);
    }
    kgt_string_free(report);
    kgt_kb_free(kb);
    kgt_backend_free(backend);
    return rc;
}
