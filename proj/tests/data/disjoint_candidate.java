int sum(int[] xs) {
    int s = 0;
    for (int v : xs) s += v;
    return s;
}
