"""Variance-based RLCT estimation and widely applicable sBIC."""
