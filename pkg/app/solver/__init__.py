"""Coupled CG-HDG finite element core"""
