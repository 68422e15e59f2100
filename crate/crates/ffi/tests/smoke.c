#include <stdio.h>
#include <string.h>
#include "dexi.h"

#define CHECK(x) do { DexiStatus s_ = (x); if (s_ != DEXI_STATUS_OK) { \
    fprintf(stderr, "%s failed: %d %s\n", #x, (int)s_, dexi_last_error()); return 1; } } while (0)

int main(void) {
    DexiCorpus *corpus = NULL;
    CHECK(dexi_corpus_bundled(&corpus));
    size_t n = 0;
    CHECK(dexi_corpus_len(corpus, &n));

    DexiReport *report = NULL;
    CHECK(dexi_explore(corpus, "cinema-3", "no-count", false, 1000, &report));
    size_t total = 0, violations = 0;
    CHECK(dexi_report_total_executed(report, &total));
    CHECK(dexi_report_violations(report, &violations));

    DexiIndex *idx = NULL;
    if (dexi_index_decode("[garbage", &idx) != DEXI_STATUS_DECODE || dexi_last_error() == NULL) {
        return 2;
    }
    printf("entries=%zu total=%zu violations=%zu\n", n, total, violations);
    dexi_report_free(report);
    dexi_corpus_free(corpus);
    return 0;
}
