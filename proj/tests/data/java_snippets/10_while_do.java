long gcd(long a, long b) {
    while (b != 0) {
        long t = a % b;
        a = b;
        b = t;
    }
    do {
        a--;
    } while (a > 100);
    return a;
}
