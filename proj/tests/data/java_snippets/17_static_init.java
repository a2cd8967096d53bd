class Registry {
    static final Map<String, Integer> CODES = new TreeMap<>();

    static {
        CODES.put("a", 0x1F);
        CODES.put("b", 1_000);
    }

    synchronized void touch() {
        synchronized (this) {
            version += 1L;
        }
    }
}
