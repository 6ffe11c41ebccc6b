#pragma once

// Run-time support compiled into every generated program. Algorithms mirror
// unistage::runtime and the interpreter exactly (hash map growth and probing,
// CSV dialect, error texts, output formatting).

namespace unistage::cgen {

inline constexpr const char* kPreludeHead = R"C(#define _POSIX_C_SOURCE 200809L
#include <errno.h>
#include <math.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>
)C";

inline constexpr const char* kPreludeCore = R"C(
typedef struct { double* d; int64_t n; int64_t cap; } af64;
typedef struct { int64_t* d; int64_t n; int64_t cap; } ai64;

static int us_argc;
static char** us_argv;
static int64_t us_alloc_bytes;

static void us_die(const char* msg) {
    fflush(stdout);
    fprintf(stderr, "error: %s\n", msg);
    exit(2);
}
static void us_die_node(uint32_t node, const char* msg) {
    fflush(stdout);
    fprintf(stderr, "error: node %u: %s\n", (unsigned)node, msg);
    exit(2);
}
static void* us_xmalloc(size_t n) {
    void* p = malloc(n ? n : 1);
    if (!p) us_die("out of memory");
    return p;
}
static void* us_xrealloc(void* p, size_t n) {
    p = realloc(p, n ? n : 1);
    if (!p) us_die("out of memory");
    return p;
}
static double us_now(void) {
    struct timespec t;
    clock_gettime(CLOCK_MONOTONIC, &t);
    return (double)t.tv_sec + (double)t.tv_nsec * 1e-9;
}

/* ---- arena: per-thread chunks, released per loop iteration ---- */
typedef struct us_chunk { struct us_chunk* prev; size_t size; size_t used; size_t pad; } us_chunk;
typedef struct { us_chunk* c; size_t used; } us_mark;
static __thread us_chunk* us_arena;

static us_mark us_arena_mark(void) {
    us_mark m;
    m.c = us_arena;
    m.used = us_arena ? us_arena->used : 0;
    return m;
}
static void us_arena_release(us_mark m) {
    while (us_arena != m.c) {
        us_chunk* p = us_arena->prev;
        free(us_arena);
        us_arena = p;
    }
    if (us_arena) us_arena->used = m.used;
}
static void* us_alloc(size_t n) {
    n = (n + 15u) & ~(size_t)15u;
    if (!us_arena || us_arena->used + n > us_arena->size) {
        size_t sz = n > ((size_t)1 << 20) ? n : ((size_t)1 << 20);
        us_chunk* c = (us_chunk*)us_xmalloc(sizeof(us_chunk) + sz);
        c->prev = us_arena;
        c->size = sz;
        c->used = 0;
        us_arena = c;
    }
    {
        void* p = (char*)(us_arena + 1) + us_arena->used;
        us_arena->used += n;
        __sync_fetch_and_add(&us_alloc_bytes, (int64_t)n);
        return p;
    }
}

/* ---- flat arrays ---- */
static af64* us_af64_new(int64_t n, uint32_t node) {
    af64* a;
    if (n < 0) us_die_node(node, "negative array length");
    a = (af64*)us_alloc(sizeof(af64));
    a->d = (double*)us_alloc((size_t)n * sizeof(double));
    memset(a->d, 0, (size_t)n * sizeof(double));
    a->n = n;
    a->cap = n;
    return a;
}
static ai64* us_ai64_new(int64_t n, uint32_t node) {
    ai64* a;
    if (n < 0) us_die_node(node, "negative array length");
    a = (ai64*)us_alloc(sizeof(ai64));
    a->d = (int64_t*)us_alloc((size_t)n * sizeof(int64_t));
    memset(a->d, 0, (size_t)n * sizeof(int64_t));
    a->n = n;
    a->cap = n;
    return a;
}
static af64* us_af64_lit(const double* src, int64_t n) {
    af64* a = us_af64_new(n, 0);
    if (n) memcpy(a->d, src, (size_t)n * sizeof(double));
    return a;
}
static ai64* us_ai64_lit(const int64_t* src, int64_t n) {
    ai64* a = us_ai64_new(n, 0);
    if (n) memcpy(a->d, src, (size_t)n * sizeof(int64_t));
    return a;
}
static af64* us_vf64_new(void) {
    af64* v = (af64*)us_xmalloc(sizeof(af64));
    v->d = NULL;
    v->n = 0;
    v->cap = 0;
    return v;
}
static ai64* us_vi64_new(void) {
    ai64* v = (ai64*)us_xmalloc(sizeof(ai64));
    v->d = NULL;
    v->n = 0;
    v->cap = 0;
    return v;
}
static void us_vf64_free(af64* v) {
    free(v->d);
    free(v);
}
static void us_vi64_free(ai64* v) {
    free(v->d);
    free(v);
}
static void us_push_f64(af64* v, double x) {
    if (v->n == v->cap) {
        int64_t old = v->cap;
        v->cap = v->cap ? v->cap * 2 : 1024;
        v->d = (double*)us_xrealloc(v->d, (size_t)v->cap * sizeof(double));
        us_alloc_bytes += (v->cap - old) * 8;
    }
    v->d[v->n++] = x;
}
static void us_push_i64(ai64* v, int64_t x) {
    if (v->n == v->cap) {
        int64_t old = v->cap;
        v->cap = v->cap ? v->cap * 2 : 1024;
        v->d = (int64_t*)us_xrealloc(v->d, (size_t)v->cap * sizeof(int64_t));
        us_alloc_bytes += (v->cap - old) * 8;
    }
    v->d[v->n++] = x;
}
static int64_t us_idx(int64_t i, int64_t n, uint32_t node) {
    if (i < 0 || i >= n) {
        fflush(stdout);
        fprintf(stderr, "error: node %u: index %lld out of bounds (length %lld)\n", (unsigned)node, (long long)i,
                (long long)n);
        exit(2);
    }
    return i;
}

/* ---- scalar helpers ---- */
static int64_t us_idiv(int64_t x, int64_t y, uint32_t node) {
    if (y == 0) us_die_node(node, "division by zero");
    if (x == INT64_MIN && y == -1) us_die_node(node, "integer overflow");
    return x / y;
}
static int64_t us_imod(int64_t x, int64_t y, uint32_t node) {
    if (y == 0) us_die_node(node, "division by zero");
    if (x == INT64_MIN && y == -1) us_die_node(node, "integer overflow");
    return x % y;
}
static int64_t us_toint(double d, uint32_t node) {
    if (!(d > -9.2e18 && d < 9.2e18)) us_die_node(node, "float to int conversion out of range");
    return (int64_t)d;
}
static uint64_t us_f64_bits(double d) {
    uint64_t u;
    memcpy(&u, &d, sizeof u);
    return u;
}
static double us_bits_f64(uint64_t u) {
    double d;
    memcpy(&d, &u, sizeof d);
    return d;
}

/* ---- output ---- */
static char us_obuf[1 << 16];
static size_t us_olen;
static void us_flush(void) {
    fwrite(us_obuf, 1, us_olen, stdout);
    us_olen = 0;
}
static void us_out_str(const char* s, size_t n) {
    if (us_olen + n > sizeof us_obuf) us_flush();
    if (n > sizeof us_obuf) {
        fwrite(s, 1, n, stdout);
        return;
    }
    memcpy(us_obuf + us_olen, s, n);
    us_olen += n;
}
static void us_out_ch(char c) {
    if (us_olen == sizeof us_obuf) us_flush();
    us_obuf[us_olen++] = c;
}
static void us_out_i64(int64_t v) {
    char b[32];
    int n = snprintf(b, sizeof b, "%lld", (long long)v);
    us_out_str(b, (size_t)n);
}
static void us_out_f64(double v) {
    char b[40];
    int n = snprintf(b, sizeof b, "%.17g", v);
    us_out_str(b, (size_t)n);
}
static void us_out_bool(int v) { us_out_ch(v ? '1' : '0'); }
static void us_out_dict(const char* const* d, int64_t n, int64_t code) {
    if (code < 0 || code >= n) {
        us_out_ch('?');
        return;
    }
    us_out_str(d[code], strlen(d[code]));
}
static void us_fmt_f64(FILE* f, double v) { fprintf(f, "%.17g", v); }

/* ---- hash map: FNV-1a, power-of-two capacity, linear probing ---- */
static uint64_t us_fnv1a(const uint64_t* k, int n) {
    uint64_t h = 14695981039346656037ull;
    int i, b;
    for (i = 0; i < n; ++i)
        for (b = 0; b < 8; ++b) {
            h ^= (k[i] >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    return h;
}
typedef struct {
    int nkeys;
    int64_t size;
    int64_t cap;
    int64_t* slots;
    uint64_t* keys;
    int64_t kcap;
} us_map;

static us_map* us_map_new(int nkeys) {
    us_map* m = (us_map*)us_xmalloc(sizeof(us_map));
    int64_t i;
    m->nkeys = nkeys;
    m->size = 0;
    m->cap = 16;
    m->slots = (int64_t*)us_xmalloc(16 * sizeof(int64_t));
    for (i = 0; i < 16; ++i) m->slots[i] = -1;
    m->kcap = 16;
    m->keys = (uint64_t*)us_xmalloc((size_t)(16 * nkeys) * sizeof(uint64_t));
    return m;
}
static int64_t us_map_find(const us_map* m, const uint64_t* key) {
    uint64_t mask = (uint64_t)m->cap - 1;
    uint64_t i = us_fnv1a(key, m->nkeys) & mask;
    for (;;) {
        int64_t g = m->slots[i];
        if (g < 0) return -1;
        if (memcmp(&m->keys[g * m->nkeys], key, (size_t)m->nkeys * sizeof(uint64_t)) == 0) return g;
        i = (i + 1) & mask;
    }
}
static void us_map_place(us_map* m, int64_t g) {
    uint64_t mask = (uint64_t)m->cap - 1;
    uint64_t i = us_fnv1a(&m->keys[g * m->nkeys], m->nkeys) & mask;
    while (m->slots[i] >= 0) i = (i + 1) & mask;
    m->slots[i] = g;
}
static int64_t us_map_insert(us_map* m, const uint64_t* key) {
    int64_t g = us_map_find(m, key);
    if (g >= 0) return g;
    if (((uint64_t)m->size + 1) * 10 > (uint64_t)m->cap * 7) {
        int64_t i;
        m->cap *= 2;
        m->slots = (int64_t*)us_xrealloc(m->slots, (size_t)m->cap * sizeof(int64_t));
        for (i = 0; i < m->cap; ++i) m->slots[i] = -1;
        for (i = 0; i < m->size; ++i) us_map_place(m, i);
    }
    if (m->size == m->kcap) {
        m->kcap *= 2;
        m->keys = (uint64_t*)us_xrealloc(m->keys, (size_t)(m->kcap * m->nkeys) * sizeof(uint64_t));
    }
    g = m->size++;
    memcpy(&m->keys[g * m->nkeys], key, (size_t)m->nkeys * sizeof(uint64_t));
    us_map_place(m, g);
    return g;
}
static uint64_t us_map_key(const us_map* m, int64_t g, int j, uint32_t node) {
    if (g < 0 || g >= m->size) us_die_node(node, "group index out of range");
    return m->keys[g * m->nkeys + j];
}

/* ---- CSV loading ---- */
typedef struct {
    int kind; /* 0 i64, 1 f64, 2 dictionary code */
    void* store;
    const char* const* dict;
    int64_t ndict;
    int64_t* slots;
    int64_t cap;
} us_field;

static double us_t_load;

static uint64_t us_str_hash(const char* s, size_t n) {
    uint64_t h = 14695981039346656037ull;
    size_t i;
    for (i = 0; i < n; ++i) {
        h ^= (unsigned char)s[i];
        h *= 1099511628211ull;
    }
    return h;
}
static void us_dict_index(us_field* f) {
    int64_t i;
    f->cap = 16;
    while (f->cap < f->ndict * 2 + 2) f->cap *= 2;
    f->slots = (int64_t*)us_xmalloc((size_t)f->cap * sizeof(int64_t));
    for (i = 0; i < f->cap; ++i) f->slots[i] = -1;
    for (i = 0; i < f->ndict; ++i) {
        uint64_t h = us_str_hash(f->dict[i], strlen(f->dict[i])) & (uint64_t)(f->cap - 1);
        while (f->slots[h] >= 0) h = (h + 1) & (uint64_t)(f->cap - 1);
        f->slots[h] = i;
    }
}
static int64_t us_dict_code(const us_field* f, const char* s, size_t n) {
    uint64_t h = us_str_hash(s, n) & (uint64_t)(f->cap - 1);
    for (;;) {
        int64_t c = f->slots[h];
        if (c < 0) return -1;
        if (strlen(f->dict[c]) == n && memcmp(f->dict[c], s, n) == 0) return c;
        h = (h + 1) & (uint64_t)(f->cap - 1);
    }
}
static void us_csv_fail(int64_t row, int col, const char* what, const char* field) {
    fflush(stdout);
    fprintf(stderr, "error: row %lld: %s '%s' in column %d\n", (long long)row, what, field, col + 1);
    exit(2);
}
static const char* us_input(int idx, const char* fallback) {
    if (us_argc > idx + 1) return us_argv[idx + 1];
    return fallback;
}
static int64_t us_csv_load(const char* path, int header, us_field* fs, int nf) {
    double t0 = us_now();
    FILE* fp = fopen(path, "rb");
    char* text;
    long sz;
    size_t pos = 0, len;
    int64_t rowno = 0;
    int first = 1, j;
    if (!fp) {
        fflush(stdout);
        fprintf(stderr, "error: cannot open input file '%s'\n", path);
        exit(2);
    }
    fseek(fp, 0, SEEK_END);
    sz = ftell(fp);
    fseek(fp, 0, SEEK_SET);
    text = (char*)us_xmalloc((size_t)sz + 1);
    len = fread(text, 1, (size_t)sz, fp);
    fclose(fp);
    text[len] = '\0';
    for (j = 0; j < nf; ++j)
        if (fs[j].kind == 2) us_dict_index(&fs[j]);
    while (pos < len) {
        char* line = text + pos;
        char* eol = memchr(line, '\n', len - pos);
        size_t ll = eol ? (size_t)(eol - line) : len - pos;
        int count = 1;
        size_t k;
        pos += ll + 1;
        if (ll > 0 && line[ll - 1] == '\r') --ll;
        line[ll] = '\0';
        if (first && header) {
            first = 0;
            continue;
        }
        first = 0;
        if (ll == 0) continue;
        ++rowno;
        for (k = 0; k < ll; ++k)
            if (line[k] == ',') ++count;
        if (count != nf) {
            fflush(stdout);
            fprintf(stderr, "error: row %lld: expected %d fields, got %d\n", (long long)rowno, nf, count);
            exit(2);
        }
        for (j = 0; j < nf; ++j) {
            char* comma = strchr(line, ',');
            char* end;
            size_t flen;
            if (comma) *comma = '\0';
            flen = strlen(line);
            if (fs[j].kind == 0) {
                long long v;
                errno = 0;
                v = strtoll(line, &end, 10);
                if (flen == 0 || *end != '\0' || errno == ERANGE) us_csv_fail(rowno, j, "invalid int64", line);
                us_push_i64((ai64*)fs[j].store, (int64_t)v);
            } else if (fs[j].kind == 1) {
                double v = strtod(line, &end);
                if (flen == 0 || *end != '\0') us_csv_fail(rowno, j, "invalid float64", line);
                us_push_f64((af64*)fs[j].store, v);
            } else {
                int64_t c = us_dict_code(&fs[j], line, flen);
                if (c < 0) us_csv_fail(rowno, j, "unknown string", line);
                us_push_i64((ai64*)fs[j].store, c);
            }
            if (comma) line = comma + 1;
        }
    }
    free(text);
    for (j = 0; j < nf; ++j)
        if (fs[j].kind == 2) free(fs[j].slots);
    us_t_load += us_now() - t0;
    return rowno;
}
)C";

inline constexpr const char* kPreludeMatmul = R"C(
/* out[i*n+j] = (acc ? out : 0) + sum_p a[aoff+i*ars+p*acs] * b[boff+p*brs+j*bcs] */
static void us_matmul_naive(const af64* a, int64_t aoff, const af64* b, int64_t boff, af64* c, int64_t m, int64_t k,
                            int64_t n, int64_t ars, int64_t acs, int64_t brs, int64_t bcs, int acc) {
    int64_t i, j, p;
    for (i = 0; i < m; ++i)
        for (j = 0; j < n; ++j) {
            double s = 0.0;
            for (p = 0; p < k; ++p) s += a->d[aoff + i * ars + p * acs] * b->d[boff + p * brs + j * bcs];
            c->d[i * n + j] = acc ? c->d[i * n + j] + s : s;
        }
}
static void us_matmul_check(const af64* a, int64_t aoff, const af64* b, int64_t boff, const af64* c, int64_t m,
                            int64_t k, int64_t n, int64_t ars, int64_t acs, int64_t brs, int64_t bcs, uint32_t node) {
    if (m > 0 && n > 0) {
        if (k > 0) {
            us_idx(aoff + (m - 1) * ars + (k - 1) * acs, a->n, node);
            us_idx(aoff, a->n, node);
            us_idx(boff + (k - 1) * brs + (n - 1) * bcs, b->n, node);
            us_idx(boff, b->n, node);
        }
        us_idx(m * n - 1, c->n, node);
    }
}
)C";

inline constexpr const char* kPreludeMatmulNaive = R"C(
static void us_matmul(const af64* a, int64_t aoff, const af64* b, int64_t boff, af64* c, int64_t m, int64_t k,
                      int64_t n, int64_t ars, int64_t acs, int64_t brs, int64_t bcs, int acc, uint32_t node) {
    us_matmul_check(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, node);
    us_matmul_naive(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, acc);
}
)C";

inline constexpr const char* kPreludeMatmulBlas = R"C(
#include <cblas.h>
static void us_matmul(const af64* a, int64_t aoff, const af64* b, int64_t boff, af64* c, int64_t m, int64_t k,
                      int64_t n, int64_t ars, int64_t acs, int64_t brs, int64_t bcs, int acc, uint32_t node) {
    enum CBLAS_TRANSPOSE ta, tb;
    int64_t lda, ldb;
    us_matmul_check(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, node);
    if (m == 0 || n == 0) return;
    if (k == 0) {
        us_matmul_naive(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, acc);
        return;
    }
    if (acs == 1 && ars >= k) { ta = CblasNoTrans; lda = ars; }
    else if (ars == 1 && acs >= m) { ta = CblasTrans; lda = acs; }
    else { us_matmul_naive(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, acc); return; }
    if (bcs == 1 && brs >= n) { tb = CblasNoTrans; ldb = brs; }
    else if (brs == 1 && bcs >= k) { tb = CblasTrans; ldb = bcs; }
    else { us_matmul_naive(a, aoff, b, boff, c, m, k, n, ars, acs, brs, bcs, acc); return; }
    cblas_dgemm(CblasRowMajor, ta, tb, (int)m, (int)n, (int)k, 1.0, a->d + aoff, (int)lda, b->d + boff, (int)ldb,
                acc ? 1.0 : 0.0, c->d, (int)n);
}
)C";

inline constexpr const char* kPreludePool = R"C(
#include <pthread.h>
typedef af64* (*us_fn)(af64*, int64_t);
typedef struct { int64_t seq; af64* data; int64_t rows; } us_task;
typedef struct {
    us_fn fn;
    int64_t width;
    int nworkers;
    pthread_t* th;
    pthread_mutex_t m;
    pthread_cond_t not_full, not_empty;
    us_task* q;
    int64_t qcap, qhead, qlen;
    int closed, finished;
    af64** results;
    int64_t* rows;
    int64_t submitted, rcap;
} us_pool;

static void* us_pool_worker(void* arg) {
    us_pool* p = (us_pool*)arg;
    for (;;) {
        us_task t;
        us_mark mk;
        af64* r;
        af64* copy;
        pthread_mutex_lock(&p->m);
        while (p->qlen == 0 && !p->closed) pthread_cond_wait(&p->not_empty, &p->m);
        if (p->qlen == 0) {
            pthread_mutex_unlock(&p->m);
            break;
        }
        t = p->q[p->qhead];
        p->qhead = (p->qhead + 1) % p->qcap;
        p->qlen--;
        pthread_cond_signal(&p->not_full);
        pthread_mutex_unlock(&p->m);
        mk = us_arena_mark();
        r = p->fn(t.data, t.rows);
        copy = (af64*)us_xmalloc(sizeof(af64));
        copy->n = copy->cap = r->n;
        copy->d = (double*)us_xmalloc((size_t)r->n * sizeof(double));
        if (r->n) memcpy(copy->d, r->d, (size_t)r->n * sizeof(double));
        us_arena_release(mk);
        free(t.data->d);
        free(t.data);
        pthread_mutex_lock(&p->m);
        p->results[t.seq] = copy;
        pthread_mutex_unlock(&p->m);
    }
    return NULL;
}
static us_pool* us_pool_new(us_fn fn, int workers, int64_t qcap, int64_t width) {
    us_pool* p = (us_pool*)us_xmalloc(sizeof(us_pool));
    int i;
    memset(p, 0, sizeof *p);
    p->fn = fn;
    p->width = width;
    p->nworkers = workers;
    p->qcap = qcap;
    p->q = (us_task*)us_xmalloc((size_t)qcap * sizeof(us_task));
    pthread_mutex_init(&p->m, NULL);
    pthread_cond_init(&p->not_full, NULL);
    pthread_cond_init(&p->not_empty, NULL);
    p->th = (pthread_t*)us_xmalloc((size_t)(workers > 0 ? workers : 1) * sizeof(pthread_t));
    for (i = 0; i < workers; ++i) pthread_create(&p->th[i], NULL, us_pool_worker, p);
    return p;
}
static void us_pool_submit(us_pool* p, const af64* src, int64_t rows, uint32_t node) {
    us_task t;
    int64_t cnt = rows * p->width;
    if (p->finished) us_die_node(node, "queue closed early: submit after finish");
    if (cnt > src->n) us_die_node(node, "batch larger than its buffer");
    t.data = (af64*)us_xmalloc(sizeof(af64));
    t.data->d = (double*)us_xmalloc((size_t)cnt * sizeof(double));
    if (cnt) memcpy(t.data->d, src->d, (size_t)cnt * sizeof(double));
    t.data->n = t.data->cap = cnt;
    t.rows = rows;
    __sync_fetch_and_add(&us_alloc_bytes, cnt * 8);
    pthread_mutex_lock(&p->m);
    if (p->submitted == p->rcap) {
        p->rcap = p->rcap ? p->rcap * 2 : 64;
        p->results = (af64**)us_xrealloc(p->results, (size_t)p->rcap * sizeof(af64*));
        p->rows = (int64_t*)us_xrealloc(p->rows, (size_t)p->rcap * sizeof(int64_t));
    }
    t.seq = p->submitted++;
    p->results[t.seq] = NULL;
    p->rows[t.seq] = rows;
    while (p->qlen == p->qcap && !p->closed) pthread_cond_wait(&p->not_full, &p->m);
    p->q[(p->qhead + p->qlen) % p->qcap] = t;
    p->qlen++;
    pthread_cond_signal(&p->not_empty);
    pthread_mutex_unlock(&p->m);
}
static int64_t us_pool_finish(us_pool* p, uint32_t node) {
    int i;
    if (p->finished) us_die_node(node, "pool finished twice");
    pthread_mutex_lock(&p->m);
    p->closed = 1;
    pthread_cond_broadcast(&p->not_empty);
    pthread_cond_broadcast(&p->not_full);
    pthread_mutex_unlock(&p->m);
    for (i = 0; i < p->nworkers; ++i) pthread_join(p->th[i], NULL);
    p->finished = 1;
    return p->submitted;
}
static af64* us_pool_result(us_pool* p, int64_t seq, uint32_t node) {
    if (!p->finished) us_die_node(node, "pool result read before finish");
    if (seq < 0 || seq >= p->submitted) us_die_node(node, "batch sequence out of range");
    return p->results[seq];
}
static int64_t us_pool_rows(us_pool* p, int64_t seq, uint32_t node) {
    if (seq < 0 || seq >= p->submitted) us_die_node(node, "batch sequence out of range");
    return p->rows[seq];
}
)C";

}  // namespace unistage::cgen
